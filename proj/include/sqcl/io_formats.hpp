#pragma once

#include <string>

#include "sqcl/dataset.hpp"

namespace sqcl {

// ---- IDX (MNIST distribution format; big-endian) ------------------------

// Parses an images/labels pair. Pixels are scaled by 1/255 exactly; no other
// normalization is applied.
ImageSet read_idx(const std::string& images_path, const std::string& labels_path);

// u8 pixel payloads; values are clamped to [0,1] then quantized.
void write_idx(const ImageSet& set, const std::string& images_path,
               const std::string& labels_path);

// ---- stroke files --------------------------------------------------------
// UTF-8 text, one sequence per line:
//   label<TAB>dx dy pen;dx dy pen;...
// with pen ∈ {0,1}.

LabeledSequences read_strokes(const std::string& path);
void write_strokes(const LabeledSequences& ds, const std::string& path);

// ---- feature-sequence files ----------------------------------------------
// Header line `n_seq seq_len feat_dim`, then per sequence a `#label` line,
// seq_len lines of floats, and a blank separator line.

LabeledSequences read_featureseq(const std::string& path);
void write_featureseq(const LabeledSequences& ds, const std::string& path);

}  // namespace sqcl
