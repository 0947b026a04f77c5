#pragma once

// Line-delimited JSON storage for a corpus: news.jsonl, impressions.jsonl and
// feedback.jsonl. Fields are written in declaration order so that a
// write -> read -> write cycle is byte-identical.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "feedrec/errors.hpp"
#include "feedrec/feedback.hpp"
#include "json.hpp"

namespace feedrec {

struct Corpus {
  std::vector<NewsArticle> news;
  std::vector<ImpressionLog> impressions;
  std::vector<FeedbackRecord> feedback;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

inline constexpr const char* kNewsFile = "news.jsonl";
inline constexpr const char* kImpressionsFile = "impressions.jsonl";
inline constexpr const char* kFeedbackFile = "feedback.jsonl";

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson to_json(const NewsArticle& n) {
  ojson j;
  j["news_id"] = n.news_id;
  j["title_tokens"] = n.title_tokens;
  j["category_id"] = n.category_id;
  return j;
}

inline ojson to_json(const ImpressionLog& imp) {
  ojson j;
  j["impression_id"] = imp.impression_id;
  j["user_id"] = imp.user_id;
  j["shown_news"] = imp.shown_news;
  j["clicked"] = imp.clicked;
  j["timestamp"] = imp.timestamp;
  return j;
}

inline ojson to_json(const FeedbackRecord& r) {
  ojson j;
  j["user_id"] = r.user_id;
  j["news_id"] = r.news_id;
  j["type"] = std::string(to_string(r.type));
  j["event_time"] = r.event_time;
  if (r.dwell_time) j["dwell_time"] = *r.dwell_time;
  return j;
}

inline void expect_keys(const ojson& j, std::initializer_list<const char*> required,
                        std::initializer_list<const char*> optional = {}) {
  if (!j.is_object()) throw std::invalid_argument("expected a JSON object");
  for (const char* k : required) {
    if (!j.contains(k)) throw std::invalid_argument(std::string("missing field '") + k + "'");
  }
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* k : required) known = known || key == k;
    for (const char* k : optional) known = known || key == k;
    if (!known) throw std::invalid_argument("unknown field '" + key + "'");
  }
}

inline NewsArticle news_from_json(const ojson& j) {
  expect_keys(j, {"news_id", "title_tokens", "category_id"});
  NewsArticle n;
  n.news_id = j.at("news_id").get<std::string>();
  n.title_tokens = j.at("title_tokens").get<std::vector<int>>();
  n.category_id = j.at("category_id").get<int>();
  return n;
}

inline ImpressionLog impression_from_json(const ojson& j) {
  expect_keys(j, {"impression_id", "user_id", "shown_news", "clicked", "timestamp"});
  ImpressionLog imp;
  imp.impression_id = j.at("impression_id").get<std::string>();
  imp.user_id = j.at("user_id").get<std::string>();
  imp.shown_news = j.at("shown_news").get<std::vector<std::string>>();
  imp.clicked = j.at("clicked").get<std::vector<std::string>>();
  imp.timestamp = j.at("timestamp").get<std::int64_t>();
  validate(imp);
  return imp;
}

inline FeedbackRecord feedback_from_json(const ojson& j) {
  expect_keys(j, {"user_id", "news_id", "type", "event_time"}, {"dwell_time"});
  FeedbackRecord r;
  r.user_id = j.at("user_id").get<std::string>();
  r.news_id = j.at("news_id").get<std::string>();
  r.type = parse_feedback_type(j.at("type").get<std::string>());
  r.event_time = j.at("event_time").get<std::int64_t>();
  if (j.contains("dwell_time")) r.dwell_time = j.at("dwell_time").get<std::int64_t>();
  validate(r);
  return r;
}

template <typename T, typename Parse>
std::vector<T> read_jsonl(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(parse(ojson::parse(line)));
    } catch (const Error& e) {
      throw ParseError(path.string(), line_no, e.what());
    } catch (const std::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
  return out;
}

template <typename T>
void write_jsonl(const std::filesystem::path& path, const std::vector<T>& items) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const T& item : items) out << to_json(item).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

inline std::vector<NewsArticle> read_news(const std::filesystem::path& file) {
  return detail::read_jsonl<NewsArticle>(file, detail::news_from_json);
}
inline std::vector<ImpressionLog> read_impressions(const std::filesystem::path& file) {
  return detail::read_jsonl<ImpressionLog>(file, detail::impression_from_json);
}
inline std::vector<FeedbackRecord> read_feedback(const std::filesystem::path& file) {
  return detail::read_jsonl<FeedbackRecord>(file, detail::feedback_from_json);
}

/// Reads the three corpus files from `dir`.
inline Corpus read_logs(const std::filesystem::path& dir) {
  Corpus c;
  c.news = read_news(dir / kNewsFile);
  c.impressions = read_impressions(dir / kImpressionsFile);
  c.feedback = read_feedback(dir / kFeedbackFile);
  return c;
}

inline void write_logs(const std::filesystem::path& dir, const Corpus& corpus) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  detail::write_jsonl(dir / kNewsFile, corpus.news);
  detail::write_jsonl(dir / kImpressionsFile, corpus.impressions);
  detail::write_jsonl(dir / kFeedbackFile, corpus.feedback);
}

}  // namespace feedrec
