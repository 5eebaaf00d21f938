#pragma once
// sketch2vec: a GRU decoder that regresses the stroke-5 sequence of a sketch
// from its image feature, used as an auxiliary training signal.

#include "sketchclip/autograd.hpp"
#include "sketchclip/vector_sketch.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace sketchclip {

struct DecoderState {
    Parameter w_h, b_h;    // init map d -> hidden
    Parameter w_ih, b_ih;  // (3 hidden) x (d + 5), gates ordered reset, update, new
    Parameter w_hh, b_hh;  // (3 hidden) x hidden
    Parameter w_p, b_p;    // hidden -> 5

    int hidden() const { return static_cast<int>(w_h.value.rows()); }
    int feature_dim() const { return static_cast<int>(w_h.value.cols()); }
    std::vector<Parameter*> parameters();
};

// Every matrix uniform(+-1/sqrt(hidden)).
DecoderState init_decoder(std::uint64_t seed, int feature_dim, int hidden);

// Start token P_0 = (0, 0, 1, 0, 0).
RowVector decoder_start_token();

// Returns steps x 5 rows (x, y, pen logits). With `teacher` (stroke-5 rows,
// at least steps - 1 of them) step t consumes ground-truth point t - 1;
// otherwise it consumes its previous prediction with the pen logits collapsed
// to a one-hot state.
ag::Var decode_sequence(ag::Tape& tape, const ag::Var& image_feature, const DecoderState& dec, int steps,
                        const Matrix* teacher);
Matrix decode_sequence(const RowVector& image_feature, const DecoderState& dec, int steps,
                       const std::optional<VectorSketch>& teacher = std::nullopt);

// Target rows for a decode of `steps`: the sketch truncated or padded with
// masked rows.
struct Sketch2VecTarget {
    Matrix points;  // steps x 5
    int valid = 0;  // leading rows that count
};
Sketch2VecTarget make_sketch2vec_target(const VectorSketch& sketch, int steps);

// (1/N) sum_t (dx^2 + dy^2) + (1/N) sum_t CE(one-hot pen, softmax(logits))
// over the valid rows. Throws ShapeError when the lengths differ.
ag::Var sketch2vec_loss(const ag::Var& prediction, const Sketch2VecTarget& target);
double sketch2vec_loss(const Matrix& prediction, const Sketch2VecTarget& target);

// Decoded rows as a stroke-5 sketch (coordinates clamped into [0,1], pen
// argmax, terminated at the first end state or the last row).
VectorSketch decoded_to_sketch(const Matrix& decoded);

}  // namespace sketchclip
