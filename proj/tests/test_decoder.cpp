#include "doctest.h"

#include "sketchclip/adam.hpp"
#include "sketchclip/decoder.hpp"
#include "sketchclip/errors.hpp"
#include "sketchclip/model.hpp"
#include "sketchclip/synthetic.hpp"
#include "test_support.hpp"

#include <cmath>

using namespace sketchclip;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Element-wise reference: squared coordinate error plus softmax cross-entropy
// of the pen logits, both averaged over the valid rows.
double loss_oracle(const Matrix& pred, const Matrix& target, int valid) {
    double total = 0.0;
    for (int t = 0; t < valid; ++t) {
        total += (pred(t, 0) - target(t, 0)) * (pred(t, 0) - target(t, 0));
        total += (pred(t, 1) - target(t, 1)) * (pred(t, 1) - target(t, 1));
        double z = 0.0;
        for (int k = 0; k < 3; ++k) z += std::exp(pred(t, 2 + k));
        for (int k = 0; k < 3; ++k) total -= target(t, 2 + k) * (pred(t, 2 + k) - std::log(z));
    }
    return total / valid;
}

}  // namespace

TEST_CASE("all-zero weights emit the output bias at every step") {
    DecoderState d = init_decoder(1, 4, 6);
    for (auto* p : d.parameters()) {
        if (p != &d.b_p) p->value.setZero();
    }
    const Matrix out = decode_sequence(RowVector::Ones(4), d, 7);
    REQUIRE(out.rows() == 7);
    for (int t = 0; t < 7; ++t) CHECK(out.row(t) == d.b_p.value);
}

TEST_CASE("one GRU step matches a scalar hand trace") {
    DecoderState d = init_decoder(0, 1, 1);
    d.w_h.value << 0.7;
    d.b_h.value << -0.1;
    d.w_ih.value.resize(3, 6);
    d.w_ih.value << 0.2, 0.1, -0.3, 0.5, 0.0, 0.4,  //
        -0.6, 0.3, 0.2, -0.1, 0.7, 0.0,             //
        0.9, -0.2, 0.1, 0.3, -0.5, 0.6;
    d.b_ih.value << 0.05, -0.05, 0.1;
    d.w_hh.value << 0.4, -0.8, 0.3;
    d.b_hh.value << 0.01, 0.02, -0.03;
    d.w_p.value << 1.0, -2.0, 0.5, 0.25, -1.5;
    d.b_p.value << 0.1, 0.2, 0.3, 0.4, 0.5;
    const double f = 1.3;

    // Start token (0, 0, 1, 0, 0): only the pen-down column contributes.
    const double h0 = 0.7 * f - 0.1;
    const double ir = 0.2 * f + 0.5 + 0.05, iz = -0.6 * f - 0.1 - 0.05, in = 0.9 * f + 0.3 + 0.1;
    const double hr = 0.4 * h0 + 0.01, hz = -0.8 * h0 + 0.02, hn = 0.3 * h0 - 0.03;
    const double r = sigmoid(ir + hr), z = sigmoid(iz + hz);
    const double n = std::tanh(in + r * hn);
    const double h1 = (1 - z) * n + z * h0;

    const Matrix free_run = decode_sequence(RowVector::Constant(1, f), d, 1);
    const VectorSketch teacher({{0.3, 0.4, PenState::End}});
    const Matrix forced = decode_sequence(RowVector::Constant(1, f), d, 1, teacher);
    for (int k = 0; k < 5; ++k) {
        const double want = d.w_p.value(k, 0) * h1 + d.b_p.value(0, k);
        CHECK(std::abs(free_run(0, k) - want) < 1e-12);
    }
    CHECK(free_run == forced);
}

TEST_CASE("teacher forcing consumes the ground-truth previous point") {
    const DecoderState d = init_decoder(3, 4, 8);
    const VectorSketch a({{0.1, 0.1, PenState::Down}, {0.9, 0.2, PenState::Up}, {0.5, 0.5, PenState::End}});
    const VectorSketch b({{0.8, 0.6, PenState::Up}, {0.9, 0.2, PenState::Up}, {0.5, 0.5, PenState::End}});
    const RowVector f = RowVector::LinSpaced(4, -0.5, 0.5);
    const Matrix pa = decode_sequence(f, d, 3, a);
    const Matrix pb = decode_sequence(f, d, 3, b);
    CHECK(pa.row(0) == pb.row(0));
    CHECK(pa.row(1) != pb.row(1));
    ag::Tape tape(false);
    const Matrix short_teacher = Matrix::Zero(1, 5);
    CHECK_THROWS_AS(decode_sequence(tape, tape.constant(f), d, 3, &short_teacher), ShapeError);
    CHECK_THROWS_AS(decode_sequence(f, d, 0), ShapeError);
}

TEST_CASE("sketch2vec loss examples") {
    const VectorSketch one({{0.3, 0.4, PenState::End}});
    const Sketch2VecTarget t = make_sketch2vec_target(one, 1);
    Matrix pred = Matrix::Zero(1, 5);
    CHECK(std::abs(sketch2vec_loss(pred, t) - (0.09 + 0.16 + std::log(3.0))) < 1e-12);
    CHECK(std::abs(0.09 + 0.16 + std::log(3.0) - 1.3486) < 1e-4);

    const VectorSketch v({{0.1, 0.2, PenState::Down}, {0.7, 0.3, PenState::Up}, {0.4, 0.9, PenState::End}});
    const Sketch2VecTarget tv = make_sketch2vec_target(v, 3);
    Matrix perfect = Matrix::Zero(3, 5);
    for (int r = 0; r < 3; ++r) {
        perfect(r, 0) = v[r].x;
        perfect(r, 1) = v[r].y;
        perfect(r, 2 + static_cast<int>(v[r].pen)) = 20.0;
    }
    CHECK(sketch2vec_loss(perfect, tv) <= 1e-6);
    CHECK(sketch2vec_loss(perfect, tv) >= 0.0);

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix p = oracle::random_matrix(rng, 3, 5);
        CHECK(std::abs(sketch2vec_loss(p, tv) - loss_oracle(p, tv.points, 3)) < 1e-12);
        CHECK(sketch2vec_loss(p, tv) >= 0.0);
    }
}

TEST_CASE("sketch2vec targets pad with masked rows and truncate") {
    const VectorSketch v({{0.1, 0.2, PenState::Down}, {0.7, 0.3, PenState::Up}, {0.4, 0.9, PenState::End}});
    const Sketch2VecTarget pad = make_sketch2vec_target(v, 6);
    CHECK(pad.valid == 3);
    CHECK(pad.points.rows() == 6);
    std::mt19937_64 rng(1);
    Matrix p = oracle::random_matrix(rng, 6, 5);
    const double base = sketch2vec_loss(p, pad);
    p.bottomRows(3) = oracle::random_matrix(rng, 3, 5);
    CHECK(sketch2vec_loss(p, pad) == base);
    CHECK(std::abs(base - loss_oracle(p, pad.points, 3)) < 1e-12);

    const Sketch2VecTarget cut = make_sketch2vec_target(v, 2);
    CHECK(cut.valid == 2);
    CHECK_THROWS_AS(sketch2vec_loss(Matrix::Zero(3, 5), cut), ShapeError);
}

// Free-running decoding feeds back detached one-hot predictions, so only the
// teacher-forced path used in training is differentiable end to end.
TEST_CASE("decoder gradients match central differences on a two-step fixture") {
    DecoderState d = init_decoder(5, 4, 3);
    std::mt19937_64 rng(6);
    Parameter f("f", oracle::random_matrix(rng, 1, 4));
    const VectorSketch v({{0.2, 0.3, PenState::Down}, {0.6, 0.1, PenState::End}});
    const Sketch2VecTarget t = make_sketch2vec_target(v, 2);
    const Matrix teacher = v.to_stroke5();
    {
        auto loss = [&](bool grad) {
            ag::Tape tape(grad);
            const ag::Var out = decode_sequence(tape, tape.parameter(f), d, 2, &teacher);
            const ag::Var l = sketch2vec_loss(out, t);
            if (grad) {
                for (auto* p : d.parameters()) p->zero_grad();
                f.zero_grad();
                tape.backward(l);
            }
            return l.scalar();
        };
        std::vector<Parameter*> ps = d.parameters();
        ps.push_back(&f);
        for (auto* p : ps) {
            loss(true);
            const Matrix g = p->grad;
            CAPTURE(p->name);
            CHECK(oracle::gradient_error(*p, g, [&] { return loss(false); }) < 1e-4);
        }
    }
}

TEST_CASE("decoded rows convert to a valid sketch") {
    Matrix rows(3, 5);
    rows << 1.4, 0.2, 3, 0, 0,  //
        0.5, -0.3, 0, 2, 0,     //
        0.5, 0.5, 0, 0, 9;
    const VectorSketch s = decoded_to_sketch(rows);
    REQUIRE(s.size() == 3);
    CHECK(s[0].x == 1.0);
    CHECK(s[1].y == 0.0);
    CHECK(s[1].pen == PenState::Up);
    CHECK(s[2].pen == PenState::End);
}

TEST_CASE("decoder and vision prompts overfit one raster/vector pair") {
    auto bb = std::make_shared<Backbone>(make_toy_backbone(0));
    TrainConfig cfg;
    cfg.prompt_depth = 2;
    cfg.context_tokens = 2;
    cfg.decoder_hidden = 32;
    Model model = make_model(bb, cfg, {"square"});
    std::mt19937_64 rng(4);
    const auto sample = make_synthetic_sample("square", 0, SketchSource::TuBerlin, 0.5, 16, 1.5, rng, "s");
    REQUIRE(sample.vector.has_value());
    const int steps = static_cast<int>(sample.vector->size());
    const Sketch2VecTarget target = make_sketch2vec_target(*sample.vector, steps);
    const Matrix teacher = target.points;

    std::vector<Parameter*> params = model.prompts.prompt_parameters();
    for (auto* p : model.decoder.parameters()) params.push_back(p);
    const Matrix vision0 = model.prompts.vision[0].value;
    Adam opt(params, AdamOptions{0.01});
    double first = 0.0, last = 0.0;
    for (int step = 0; step < 500; ++step) {
        opt.zero_grad();
        ag::Tape tape;
        const auto prompts = prompt_vars(tape, model.prompts.vision);
        const ag::Var f = bb->vision.encode(tape, sample.raster, prompts);
        const ag::Var l = sketch2vec_loss(decode_sequence(tape, f, model.decoder, steps, &teacher), target);
        tape.backward(l);
        opt.step();
        if (step == 0) first = l.scalar();
        last = l.scalar();
        if (last < 0.05) break;
    }
    MESSAGE("sketch2vec overfit: " << first << " -> " << last);
    CHECK(last < 0.05);
    CHECK(model.prompts.vision[0].value != vision0);
}
