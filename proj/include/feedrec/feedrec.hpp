// Convenience header pulling in the whole library.
#pragma once

#include "feedrec/autodiff.hpp"
#include "feedrec/checkpoint.hpp"
#include "feedrec/commands.hpp"
#include "feedrec/config.hpp"
#include "feedrec/dataset.hpp"
#include "feedrec/errors.hpp"
#include "feedrec/feedback.hpp"
#include "feedrec/heads_losses.hpp"
#include "feedrec/log_io.hpp"
#include "feedrec/metrics.hpp"
#include "feedrec/model.hpp"
#include "feedrec/model_config.hpp"
#include "feedrec/news_encoder.hpp"
#include "feedrec/params.hpp"
#include "feedrec/synthgen.hpp"
#include "feedrec/trainer.hpp"
#include "feedrec/transformer.hpp"
#include "feedrec/user_encoder.hpp"
