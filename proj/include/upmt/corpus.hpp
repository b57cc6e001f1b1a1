/// @file
/// @brief Small bundled corpus of traditional public-domain melodies, used to
/// pretrain the attention model before favorite-aware fine-tuning.
#pragma once

#include <vector>

#include "upmt/midi_io.hpp"

namespace upmt {

/// Each melody in several transpositions, one single-track Score per entry.
std::vector<Score> public_domain_tunes();

}  // namespace upmt
