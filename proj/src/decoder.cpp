#include "sketchclip/decoder.hpp"

#include "sketchclip/errors.hpp"
#include "sketchclip/prompts.hpp"

#include <cmath>

namespace sketchclip {

std::vector<Parameter*> DecoderState::parameters() { return {&w_h, &b_h, &w_ih, &b_ih, &w_hh, &b_hh, &w_p, &b_p}; }

DecoderState init_decoder(std::uint64_t seed, int feature_dim, int hidden) {
    if (hidden < 1) throw ShapeError("decoder hidden width must be positive");
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    DecoderState d;
    d.w_h = Parameter("decoder.w_h", uniform_matrix(rng, hidden, feature_dim, bound));
    d.b_h = Parameter("decoder.b_h", uniform_matrix(rng, 1, hidden, bound));
    d.w_ih = Parameter("decoder.w_ih", uniform_matrix(rng, 3 * hidden, feature_dim + 5, bound));
    d.b_ih = Parameter("decoder.b_ih", uniform_matrix(rng, 1, 3 * hidden, bound));
    d.w_hh = Parameter("decoder.w_hh", uniform_matrix(rng, 3 * hidden, hidden, bound));
    d.b_hh = Parameter("decoder.b_hh", uniform_matrix(rng, 1, 3 * hidden, bound));
    d.w_p = Parameter("decoder.w_p", uniform_matrix(rng, 5, hidden, bound));
    d.b_p = Parameter("decoder.b_p", uniform_matrix(rng, 1, 5, bound));
    return d;
}

RowVector decoder_start_token() {
    RowVector p = RowVector::Zero(5);
    p(2) = 1.0;
    return p;
}

namespace {

RowVector collapse_pen(const RowVector& p) {
    RowVector out = RowVector::Zero(5);
    out(0) = p(0);
    out(1) = p(1);
    Eigen::Index best = 0;
    p.segment(2, 3).maxCoeff(&best);
    out(2 + best) = 1.0;
    return out;
}

}  // namespace

ag::Var decode_sequence(ag::Tape& tape, const ag::Var& image_feature, const DecoderState& dec, int steps,
                        const Matrix* teacher) {
    if (steps < 1) throw ShapeError("decode needs at least one step");
    if (teacher && teacher->rows() < steps - 1) throw ShapeError("teacher sequence shorter than the decode length");
    if (image_feature.cols() != dec.feature_dim()) throw ShapeError("decoder feature width mismatch");
    const int h = dec.hidden();
    const ag::Var b_h = tape.parameter(dec.b_h), b_ih = tape.parameter(dec.b_ih), b_hh = tape.parameter(dec.b_hh),
                  b_p = tape.parameter(dec.b_p);
    const ag::Var w_ih = tape.parameter(dec.w_ih), w_hh = tape.parameter(dec.w_hh), w_p = tape.parameter(dec.w_p);
    ag::Var state = ag::linear(image_feature, tape.parameter(dec.w_h), &b_h);
    RowVector prev = decoder_start_token();
    std::vector<ag::Var> outputs;
    for (int t = 0; t < steps; ++t) {
        if (teacher && t > 0) prev = teacher->row(t - 1);
        const std::array<ag::Var, 2> parts = {image_feature, tape.constant(prev)};
        const ag::Var gi = ag::linear(ag::concat_cols(parts), w_ih, &b_ih);
        const ag::Var gh = ag::linear(state, w_hh, &b_hh);
        const ag::Var r = ag::sigmoid(ag::add(ag::slice_cols(gi, 0, h), ag::slice_cols(gh, 0, h)));
        const ag::Var z = ag::sigmoid(ag::add(ag::slice_cols(gi, h, h), ag::slice_cols(gh, h, h)));
        const ag::Var n = ag::tanh(ag::add(ag::slice_cols(gi, 2 * h, h), ag::mul(r, ag::slice_cols(gh, 2 * h, h))));
        state = ag::add(ag::mul(ag::one_minus(z), n), ag::mul(z, state));
        const ag::Var p = ag::linear(state, w_p, &b_p);
        outputs.push_back(p);
        if (!teacher) prev = collapse_pen(p.value());
    }
    return outputs.size() == 1 ? outputs.front() : ag::concat_rows(outputs);
}

Matrix decode_sequence(const RowVector& image_feature, const DecoderState& dec, int steps,
                       const std::optional<VectorSketch>& teacher) {
    ag::Tape tape(false);
    if (teacher) {
        const Matrix rows = teacher->to_stroke5();
        return decode_sequence(tape, tape.constant(image_feature), dec, steps, &rows).value();
    }
    return decode_sequence(tape, tape.constant(image_feature), dec, steps, nullptr).value();
}

Sketch2VecTarget make_sketch2vec_target(const VectorSketch& sketch, int steps) {
    if (steps < 1) throw ShapeError("decode needs at least one step");
    Sketch2VecTarget t;
    t.points = Matrix::Zero(steps, 5);
    const Matrix rows = sketch.to_stroke5();
    t.valid = static_cast<int>(std::min<Eigen::Index>(rows.rows(), steps));
    t.points.topRows(t.valid) = rows.topRows(t.valid);
    return t;
}

ag::Var sketch2vec_loss(const ag::Var& prediction, const Sketch2VecTarget& target) {
    if (prediction.rows() != target.points.rows() || prediction.cols() != 5) {
        throw ShapeError("sketch2vec prediction has " + std::to_string(prediction.rows()) + " rows, target " +
                         std::to_string(target.points.rows()));
    }
    if (target.valid < 1) throw ShapeError("sketch2vec target has no valid rows");
    ag::Tape& tape = *prediction.tape();
    const int n = target.valid;
    const ag::Var pred = ag::slice_rows(prediction, 0, n);
    const ag::Var diff = ag::sub(ag::slice_cols(pred, 0, 2), tape.constant(target.points.topLeftCorner(n, 2)));
    const ag::Var coord = ag::sum(ag::mul(diff, diff));
    const ag::Var logp = ag::log_softmax_rows(ag::slice_cols(pred, 2, 3));
    const ag::Var pen = ag::scale(ag::sum(ag::mul(logp, tape.constant(target.points.block(0, 2, n, 3)))), -1.0);
    return ag::scale(ag::add(coord, pen), 1.0 / n);
}

double sketch2vec_loss(const Matrix& prediction, const Sketch2VecTarget& target) {
    ag::Tape tape(false);
    return sketch2vec_loss(tape.constant(prediction), target).scalar();
}

VectorSketch decoded_to_sketch(const Matrix& decoded) {
    std::vector<StrokePoint> pts;
    for (Eigen::Index t = 0; t < decoded.rows(); ++t) {
        Eigen::Index best = 0;
        decoded.row(t).segment(2, 3).maxCoeff(&best);
        StrokePoint p{std::clamp(decoded(t, 0), 0.0, 1.0), std::clamp(decoded(t, 1), 0.0, 1.0),
                      static_cast<PenState>(best)};
        const bool last = t + 1 == decoded.rows() || p.pen == PenState::End;
        if (last) p.pen = PenState::End;
        pts.push_back(p);
        if (last) break;
    }
    return VectorSketch(std::move(pts));
}

}  // namespace sketchclip
