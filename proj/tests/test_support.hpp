#pragma once
// Test-only oracles: a plain-Eigen reference of the prompted encoders written
// layer by layer without the autograd tape, and a central-difference checker.

#include "sketchclip/backbone.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using sketchclip::Matrix;
using sketchclip::Parameter;
using sketchclip::RowVector;

inline Matrix layer_norm(const Matrix& x, const Parameter& g, const Parameter& b) {
    Matrix y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double mu = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c) mu += x(r, c);
        mu /= static_cast<double>(x.cols());
        double var = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
        var /= static_cast<double>(x.cols());
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            y(r, c) = (x(r, c) - mu) / std::sqrt(var + 1e-5) * g.value(0, c) + b.value(0, c);
        }
    }
    return y;
}

inline Matrix affine(const Matrix& x, const Parameter& w, const Parameter* b) {
    Matrix y(x.rows(), w.value.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (Eigen::Index o = 0; o < w.value.rows(); ++o) {
            double acc = b ? b->value(0, o) : 0.0;
            for (Eigen::Index i = 0; i < x.cols(); ++i) acc += x(r, i) * w.value(o, i);
            y(r, o) = acc;
        }
    }
    return y;
}

inline Matrix attention(const Matrix& x, const sketchclip::MultiHeadAttention& a, bool causal) {
    const Matrix q = affine(x, a.q_w, &a.q_b), k = affine(x, a.k_w, &a.k_b), v = affine(x, a.v_w, &a.v_b);
    const Eigen::Index n = x.rows(), width = q.cols(), hd = width / a.heads;
    Matrix merged = Matrix::Zero(n, width);
    for (int h = 0; h < a.heads; ++h) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::Index visible = causal ? i + 1 : n;
            std::vector<double> s(static_cast<std::size_t>(visible));
            double top = -1e300;
            for (Eigen::Index j = 0; j < visible; ++j) {
                double dot = 0.0;
                for (Eigen::Index c = 0; c < hd; ++c) dot += q(i, h * hd + c) * k(j, h * hd + c);
                s[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(hd));
                top = std::max(top, s[static_cast<std::size_t>(j)]);
            }
            double z = 0.0;
            for (double& e : s) {
                e = std::exp(e - top);
                z += e;
            }
            for (Eigen::Index j = 0; j < visible; ++j) {
                for (Eigen::Index c = 0; c < hd; ++c) merged(i, h * hd + c) += s[static_cast<std::size_t>(j)] / z * v(j, h * hd + c);
            }
        }
    }
    return affine(merged, a.out_w, &a.out_b);
}

inline Matrix block(const Matrix& x, const sketchclip::TransformerBlock& b, bool causal) {
    const Matrix h = x + attention(layer_norm(x, b.ln1.gamma, b.ln1.beta), b.attn, causal);
    Matrix f = affine(layer_norm(h, b.ln2.gamma, b.ln2.beta), b.mlp.fc1_w, &b.mlp.fc1_b);
    for (Eigen::Index i = 0; i < f.size(); ++i) f(i) = f(i) / (1.0 + std::exp(-1.702 * f(i)));
    return h + affine(f, b.mlp.fc2_w, &b.mlp.fc2_b);
}

// Image feature with deep prompts: layer j (1-based) receives prompts[j-1]
// in its prompt slots for j <= J; the prompt outputs of layers before J are
// dropped, those of layer J are carried through the remaining layers.
inline RowVector vision_feature(const sketchclip::VisionEncoder& enc, const sketchclip::RasterSketch& img,
                                const std::vector<Matrix>& prompts) {
    const auto& c = enc.config;
    const int g = c.grid(), p = c.patch_size;
    Matrix tokens(g * g + 1, c.width);
    tokens.row(0) = enc.class_embed.value;
    for (int gy = 0; gy < g; ++gy) {
        for (int gx = 0; gx < g; ++gx) {
            for (int o = 0; o < c.width; ++o) {
                double acc = 0.0;
                int col = 0;
                for (int ch = 0; ch < 3; ++ch) {
                    for (int y = 0; y < p; ++y) {
                        for (int x = 0; x < p; ++x) {
                            const double v = (img.at(ch, gy * p + y, gx * p + x) - c.mean[ch]) / c.std[ch];
                            acc += enc.patch_embed.value(o, col++) * v;
                        }
                    }
                }
                tokens(1 + gy * g + gx, o) = acc;
            }
        }
    }
    tokens += enc.pos_embed.value;
    Matrix x = layer_norm(tokens, enc.ln_pre.gamma, enc.ln_pre.beta);
    const Eigen::Index n_tokens = x.rows();
    const int depth = static_cast<int>(prompts.size());
    Matrix carried;  // prompt outputs of layer J
    for (int layer = 1; layer <= c.layers; ++layer) {
        Matrix input;
        if (depth > 0 && prompts[0].rows() > 0 && layer <= depth) {
            input.resize(n_tokens + prompts[static_cast<std::size_t>(layer - 1)].rows(), c.width);
            input << x, prompts[static_cast<std::size_t>(layer - 1)];
        } else if (carried.rows() > 0) {
            input.resize(n_tokens + carried.rows(), c.width);
            input << x, carried;
        } else {
            input = x;
        }
        const Matrix out = block(input, enc.blocks[static_cast<std::size_t>(layer - 1)], false);
        x = out.topRows(n_tokens);
        if (out.rows() > n_tokens) carried = out.bottomRows(out.rows() - n_tokens);
    }
    const Matrix cls = layer_norm(x.topRows(1), enc.ln_post.gamma, enc.ln_post.beta);
    return affine(cls, enc.proj, nullptr);
}

// Text feature of [start, prompts, name..., end] under a causal mask, with
// positions 0, (1..P skipped for prompts), P+1.. for the remaining tokens.
inline RowVector text_feature(const sketchclip::TextEncoder& enc, const std::vector<int>& name,
                              const std::vector<Matrix>& prompts) {
    const int depth = static_cast<int>(prompts.size());
    const Eigen::Index plen = depth > 0 ? prompts[0].rows() : 0;
    const Eigen::Index n = static_cast<Eigen::Index>(name.size()) + 2 + plen;
    Matrix x(n, enc.config.width);
    x.row(0) = enc.token_embed.value.row(enc.start_token) + enc.pos_embed.value.row(0);
    for (Eigen::Index r = 0; r < plen; ++r) x.row(1 + r) = prompts[0].row(r);
    for (std::size_t i = 0; i < name.size(); ++i) {
        const Eigen::Index pos = plen + 1 + static_cast<Eigen::Index>(i);
        x.row(pos) = enc.token_embed.value.row(name[i]) + enc.pos_embed.value.row(pos);
    }
    x.row(n - 1) = enc.token_embed.value.row(enc.end_token) + enc.pos_embed.value.row(n - 1);
    for (int layer = 1; layer <= enc.config.layers; ++layer) {
        if (plen > 0 && layer >= 2 && layer <= depth) {
            for (Eigen::Index r = 0; r < plen; ++r) x.row(1 + r) = prompts[static_cast<std::size_t>(layer - 1)].row(r);
        }
        x = block(x, enc.blocks[static_cast<std::size_t>(layer - 1)], true);
    }
    const Matrix eot = layer_norm(x.bottomRows(1), enc.ln_final.gamma, enc.ln_final.beta);
    return affine(eot, enc.proj, nullptr);
}

// Norm-wise relative error between `analytic` and the central-difference
// gradient of `loss` with respect to `p`.
inline double gradient_error(Parameter& p, const Matrix& analytic, const std::function<double()>& loss,
                             double h = 1e-5) {
    Matrix numeric(p.value.rows(), p.value.cols());
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
        const double keep = p.value(i);
        p.value(i) = keep + h;
        const double up = loss();
        p.value(i) = keep - h;
        const double down = loss();
        p.value(i) = keep;
        numeric(i) = (up - down) / (2.0 * h);
    }
    const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
    return (analytic - numeric).norm() / scale;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("sketchclip_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double s = 1.0) {
    std::normal_distribution<double> n(0.0, s);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
    return m;
}

}  // namespace oracle
