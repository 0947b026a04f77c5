#pragma once

// Implementations of the command-line subcommands. Each writes everything it
// produces below its output directory, including the resolved config.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "feedrec/checkpoint.hpp"
#include "feedrec/config.hpp"
#include "feedrec/log_io.hpp"
#include "feedrec/metrics.hpp"
#include "feedrec/synthgen.hpp"
#include "feedrec/trainer.hpp"

namespace feedrec {

namespace fs = std::filesystem;

inline void write_json_file(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

inline json loss_json(const LossBreakdown& l) {
  return {{"total", l.total}, {"click", l.click}, {"finish", l.finish},
          {"dwell", l.dwell}, {"disentangle", l.disentangle}, {"samples", l.samples}};
}

/// All feedback but click and skip removed, no dwell embedding, auxiliary
/// losses off.
inline TrainConfig click_only(TrainConfig c) {
  c.drop_feedback = {FeedbackType::kFinish, FeedbackType::kQuickClose, FeedbackType::kShare,
                     FeedbackType::kDislike};
  c.options.disable_dwell = true;
  c.weights = {0.0, 0.0, 0.0};
  return c;
}

// ---------------------------------------------------------------------------

inline CorpusStats cmd_generate(const RunConfig& cfg, const fs::path& out, std::ostream& log) {
  const Corpus corpus = generate_corpus(cfg.generator);
  write_logs(out, corpus);
  const CorpusStats stats = corpus_stats(corpus);
  write_json_file(out / "stats.json", to_json(stats));
  write_json_file(out / "config.json", json(cfg));
  log << "generated " << corpus.news.size() << " news, " << corpus.impressions.size()
      << " impressions, " << corpus.feedback.size() << " feedback records into " << out.string()
      << "\n";
  return stats;
}

inline json train_report(const TrainResult<float>& r, const TrainConfig& cfg) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    json je{{"epoch", e.epoch}, {"running", loss_json(e.running)}, {"seconds", e.seconds}};
    je["train_loss"] = e.train_loss ? loss_json(*e.train_loss) : json();
    je["validation_auc"] = e.validation_auc ? json(*e.validation_auc) : json();
    epochs.push_back(je);
  }
  const json config(cfg);
  return {{"config", config},
          {"config_hash", config_hash(config)},
          {"initial_train_loss", r.initial_loss ? loss_json(*r.initial_loss) : json()},
          {"epochs", epochs},
          {"train_samples", r.train_samples},
          {"samples_without_history", r.samples_without_history},
          {"dropped_impressions", r.dropped_impressions}};
}

inline json cmd_train(const RunConfig& cfg, const fs::path& corpus_dir, const fs::path& out,
                      std::ostream& log) {
  const Corpus corpus = read_logs(corpus_dir);
  auto result = train<float>(corpus, cfg.training, [&](const EpochReport& e) {
    log << "epoch " << e.epoch << "  loss " << e.running.total << "  L_R " << e.running.click
        << "  L_F " << e.running.finish << "  L_T " << e.running.dwell << "  L_D "
        << e.running.disentangle;
    if (e.validation_auc) log << "  val_auc " << *e.validation_auc;
    log << "  (" << std::fixed << std::setprecision(1) << e.seconds << "s)"
        << std::defaultfloat << std::setprecision(6) << "\n";
  });
  save_checkpoint(out / "model.ckpt", CheckpointMeta{cfg.training, cfg.training.epochs, result.rng_state},
                  result.model);
  json report = train_report(result, cfg.training);
  write_json_file(out / "report.json", report);
  write_json_file(out / "config.json", json(cfg));
  log << "checkpoint written to " << (out / "model.ckpt").string() << "\n";
  return report;
}

inline std::string fmt_opt(const std::optional<double>& v, int precision = 4) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

inline std::string metrics_table(const ClickMetrics& c, const EngagementMetrics& e) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "metric        value\n";
  os << "AUC           " << c.auc << "\n";
  os << "MRR           " << c.mrr << "\n";
  os << "nDCG@5        " << c.ndcg5 << "\n";
  os << "HR@5          " << c.hr5 << "\n";
  os << "share_ratio   " << fmt_opt(e.share_ratio) << "\n";
  os << "dislike_ratio " << fmt_opt(e.dislike_ratio) << "\n";
  os << "finish_rate   " << fmt_opt(e.finish_rate) << "\n";
  os << "mean_dwell    " << fmt_opt(e.mean_dwell, 2) << "\n";
  os << "impressions   " << c.auc_impressions << " (excluded " << c.excluded_auc << ")\n";
  return os.str();
}

inline json cmd_evaluate(const fs::path& checkpoint, const fs::path& corpus_dir, const fs::path& out,
                         const EvaluationConfig& eval, std::ostream& log) {
  eval.validate();
  const Checkpoint<float> ckpt = load_checkpoint<float>(checkpoint);
  const Corpus corpus = read_logs(corpus_dir);
  const TrainConfig& tc = ckpt.meta.config;
  PreparedData data = prepare_data(corpus, tc);
  const auto& imps = eval.split == "test" ? data.split.test : data.split.validation;
  const EvaluationReport r = evaluate_impressions(ckpt.model, data.index, data.labels,
                                                  std::span<const ImpressionLog>(imps), tc.options);
  const std::string table = metrics_table(r.click, r.engagement);
  const json config{{"checkpoint", fs::absolute(checkpoint).string()},
                    {"corpus", fs::absolute(corpus_dir).string()},
                    {"evaluation", {{"split", eval.split}, {"write_scores", eval.write_scores}}},
                    {"training", json(tc)}};
  const json metrics{{"split", eval.split},
                     {"click", r.click},
                     {"engagement", r.engagement},
                     {"config_hash", config_hash(json(tc))}};
  write_json_file(out / "metrics.json", metrics);
  write_text_file(out / "metrics.txt", table);
  write_json_file(out / "config.json", config);
  if (eval.write_scores) {
    std::ostringstream os;
    for (std::size_t i = 0; i < imps.size(); ++i) {
      json row{{"impression_id", imps[i].impression_id}, {"user_id", imps[i].user_id}};
      json cands = json::array();
      for (std::size_t c = 0; c < r.scores[i].news.size(); ++c) {
        const Scores& s = r.scores[i].scores[c];
        cands.push_back({{"news_id", r.scores[i].news[c]}, {"click", s.click}, {"finish", s.finish},
                         {"dwell", s.dwell}});
      }
      row["candidates"] = cands;
      os << row.dump() << "\n";
    }
    write_text_file(out / "scores.jsonl", os.str());
  }
  log << table;
  return metrics;
}

inline bool cmd_gradcheck(const GradcheckOptions& opt, std::ostream& log) {
  const GradcheckReport r = gradcheck(opt);
  log << std::left << std::setw(22) << "group" << std::setw(14) << "max_rel_err" << std::setw(8)
      << "checked" << "status  worst\n";
  for (const auto& g : r.groups) {
    std::ostringstream err;
    err << std::scientific << std::setprecision(3) << g.max_relative_error;
    log << std::left << std::setw(22) << g.group << std::setw(14) << err.str() << std::setw(8)
        << g.checked << (g.pass ? "PASS    " : "FAIL    ") << g.worst_entry << "\n";
  }
  log << std::right << (r.pass ? "PASS" : "FAIL") << " (d=" << opt.dim << ", " << std::fixed
      << std::setprecision(2) << r.seconds << "s)\n"
      << std::defaultfloat << std::setprecision(6);
  return r.pass;
}

struct RankedRow {
  std::string news_id;
  Scores scores;
};

/// Ranks candidates for a user given all of the user's logged feedback.
inline std::vector<RankedRow> cmd_rank(const fs::path& checkpoint, const fs::path& corpus_dir,
                                       const std::string& user_id,
                                       const std::vector<std::string>& candidates, std::ostream& log) {
  if (candidates.empty()) throw InputError("rank needs at least one candidate");
  const Checkpoint<float> ckpt = load_checkpoint<float>(checkpoint);
  const Corpus corpus = read_logs(corpus_dir);
  const TrainConfig& tc = ckpt.meta.config;
  const FeedIndex index(corpus, tc.history_options());
  for (const auto& id : candidates) {
    if (!index.has_news(id)) throw InputError("unknown candidate news " + id);
  }
  const Matrix<float> catalog = encode_catalog(ckpt.model, index);
  const ScoreRequest req{user_id, std::numeric_limits<std::int64_t>::max(), candidates};
  const auto scored = score_requests(ckpt.model, index, catalog, std::span<const ScoreRequest>(&req, 1),
                                     tc.options);
  std::vector<RankedRow> rows;
  for (std::size_t i = 0; i < candidates.size(); ++i) rows.push_back({candidates[i], scored[0].scores[i]});
  std::stable_sort(rows.begin(), rows.end(),
                   [](const RankedRow& a, const RankedRow& b) { return a.scores.click > b.scores.click; });
  if (index.records_of(user_id).empty()) {
    log << "note: user " << user_id << " has no history; all scores are 0\n";
  }
  log << "rank  news_id        y_hat       z_hat       t_hat\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    log << std::left << std::setw(6) << i + 1 << std::setw(13) << rows[i].news_id << std::right
        << std::fixed << std::setprecision(6) << std::setw(10) << rows[i].scores.click << "  "
        << std::setw(10) << rows[i].scores.finish << "  " << std::setw(10) << rows[i].scores.dwell
        << "\n";
  }
  log << std::defaultfloat;
  return rows;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationVariant {
  std::string name;
  std::string family;  // full | feedback | loss | component | embedding | threshold | baseline
  TrainConfig config;
};

inline std::vector<AblationVariant> ablation_variants(const RunConfig& cfg) {
  const TrainConfig& base = cfg.training;
  std::vector<AblationVariant> v;
  v.push_back({"full", "full", base});
  for (FeedbackType t : kAllFeedbackTypes) {
    TrainConfig c = base;
    c.drop_feedback.insert(t);
    v.push_back({"drop_" + std::string(to_string(t)), "feedback", c});
  }
  for (const char* loss : {"finish", "dwell", "disentangle"}) {
    TrainConfig c = base;
    const std::string l = loss;
    if (l == "finish") c.disable_finish_loss = true;
    if (l == "dwell") c.disable_dwell_loss = true;
    if (l == "disentangle") c.disable_disentangle_loss = true;
    v.push_back({"no_" + l + "_loss", "loss", c});
  }
  if (cfg.ablation.components) {
    TrainConfig a = base, b = base, c = base;
    a.options.disable_hetero = true;
    b.options.disable_homo = true;
    c.options.disable_strong_to_weak = true;
    v.push_back({"no_hetero", "component", a});
    v.push_back({"no_homo", "component", b});
    v.push_back({"no_strong_to_weak", "component", c});
  }
  if (cfg.ablation.embeddings) {
    TrainConfig a = base, b = base, c = base, d = base;
    a.options.disable_position = true;
    b.options.disable_type = true;
    c.options.disable_dwell = true;
    d.options.disable_interval = true;
    v.push_back({"no_position_emb", "embedding", a});
    v.push_back({"no_type_emb", "embedding", b});
    v.push_back({"no_dwell_emb", "embedding", c});
    v.push_back({"no_interval_emb", "embedding", d});
  }
  for (double t : cfg.ablation.t_sweep) {
    if (t == base.quick_close_threshold) continue;  // same as the full model
    TrainConfig c = base;
    c.quick_close_threshold = t;
    std::ostringstream name;
    name << "T=" << t;
    v.push_back({name.str(), "threshold", c});
  }
  v.push_back({"click_only", "baseline", click_only(base)});
  return v;
}

struct AblationRow {
  std::string name;
  std::string family;
  std::string config_hash;
  ClickMetrics click;
  EngagementMetrics engagement;
  double seconds = 0;
};

/// Horizontal bar chart, one bar per label.
inline std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                                 const std::vector<double>& values) {
  const int bar_h = 18, gap = 6, left = 170, width = 420, top = 40;
  const int height = top + static_cast<int>(labels.size()) * (bar_h + gap) + 20;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double x : values) {
    if (!std::isfinite(x)) continue;
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  // Bars start slightly below the minimum so differences stay visible.
  const double span = std::max(hi - lo, 1e-9);
  const double base = lo - 0.25 * span;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + width + 80 << "\" height=\""
     << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<text x=\"10\" y=\"22\" font-size=\"15\">" << title << "</text>\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = top + static_cast<int>(i) * (bar_h + gap);
    os << "<text x=\"" << left - 8 << "\" y=\"" << y + 13 << "\" text-anchor=\"end\">" << labels[i]
       << "</text>\n";
    if (!std::isfinite(values[i])) {
      os << "<text x=\"" << left + 4 << "\" y=\"" << y + 13 << "\">n/a</text>\n";
      continue;
    }
    const double w = width * (values[i] - base) / (hi - base + 1e-12);
    os << "<rect x=\"" << left << "\" y=\"" << y << "\" width=\"" << std::max(1.0, w)
       << "\" height=\"" << bar_h << "\" fill=\"" << (i == 0 ? "#c0504d" : "#4f81bd") << "\"/>\n";
    os << "<text x=\"" << left + std::max(1.0, w) + 4 << "\" y=\"" << y + 13 << "\">" << std::fixed
       << std::setprecision(4) << values[i] << std::defaultfloat << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const fs::path& corpus_dir,
                                           const fs::path& out, std::ostream& log) {
  const Corpus corpus = read_logs(corpus_dir);
  std::vector<AblationRow> rows;
  for (const AblationVariant& v : ablation_variants(cfg)) {
    const auto start = std::chrono::steady_clock::now();
    TrainConfig tc = v.config;
    tc.track_train_loss = false;
    tc.validate_each_epoch = false;
    auto result = train<float>(corpus, tc);
    PreparedData data = prepare_data(corpus, tc);
    const auto r = evaluate_impressions(result.model, data.index, data.labels,
                                        std::span<const ImpressionLog>(data.split.test), tc.options);
    AblationRow row{v.name, v.family, config_hash(json(v.config)), r.click, r.engagement, 0};
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log << std::left << std::setw(20) << v.name << " AUC " << std::fixed << std::setprecision(4)
        << r.click.auc << "  finish " << fmt_opt(r.engagement.finish_rate) << "  ("
        << std::setprecision(1) << row.seconds << "s)\n"
        << std::defaultfloat << std::setprecision(6) << std::right;
    rows.push_back(std::move(row));
  }

  json table = json::array();
  std::ostringstream md;
  md << "| variant | family | config_hash | AUC | MRR | nDCG@5 | HR@5 | share | dislike | finish | dwell |\n"
     << "|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    table.push_back({{"variant", r.name}, {"family", r.family}, {"config_hash", r.config_hash},
                     {"click", r.click}, {"engagement", r.engagement}, {"seconds", r.seconds}});
    std::ostringstream line;
    line << std::fixed << std::setprecision(4) << "| " << r.name << " | " << r.family << " | "
         << r.config_hash << " | " << r.click.auc << " | " << r.click.mrr << " | " << r.click.ndcg5
         << " | " << r.click.hr5 << " | " << fmt_opt(r.engagement.share_ratio) << " | "
         << fmt_opt(r.engagement.dislike_ratio) << " | " << fmt_opt(r.engagement.finish_rate)
         << " | " << fmt_opt(r.engagement.mean_dwell, 2) << " |\n";
    md << line.str();
  }
  write_json_file(out / "ablation.json", table);
  write_text_file(out / "ablation.md", md.str());
  write_json_file(out / "config.json", json(cfg));

  auto nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> labels;
  std::vector<double> auc, finish, share;
  for (const auto& r : rows) {
    labels.push_back(r.name);
    auc.push_back(r.click.auc);
    finish.push_back(r.engagement.finish_rate.value_or(nan));
    share.push_back(r.engagement.share_ratio.value_or(nan));
  }
  write_text_file(out / "ablation_auc.svg", bar_chart_svg("Test AUC by variant", labels, auc));
  write_text_file(out / "ablation_finish.svg", bar_chart_svg("Top-5 finish rate by variant", labels, finish));
  write_text_file(out / "ablation_share.svg", bar_chart_svg("Top-5 share ratio by variant", labels, share));
  log << "ablation table written to " << (out / "ablation.md").string() << "\n";
  return rows;
}

}  // namespace feedrec
