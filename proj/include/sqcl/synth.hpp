#pragma once

#include <cstdint>

#include "sqcl/dataset.hpp"

namespace sqcl {

enum class SynthKind { spectrogram_like, stroke_like };

// Seeded synthetic sequence sets standing in for precomputed speech features
// (fixed 101×40) and hand-drawn stroke data (variable length 8–211, features
// dx, dy, pen). Classes are separable by construction; see
// template_classifier_accuracy for the independent check.
LabeledSequences synth_sequences(SynthKind kind, int num_classes, int per_class, uint64_t seed);

// Seeded digit-like 28×28 images, 10 classes: glyph polylines rendered under
// random affine jitter, vertex noise and pixel noise.
ImageSet synth_digits(int per_class, uint64_t seed);

// Nearest-class-template classifier (class means in a fixed embedding).
// Not a learner; used as the separability oracle for generated data.
double template_classifier_accuracy(const LabeledSequences& train, const LabeledSequences& test);
double template_classifier_accuracy(const ImageSet& train, const ImageSet& test);

}  // namespace sqcl
