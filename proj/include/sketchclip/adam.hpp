#pragma once

#include "sketchclip/autograd.hpp"

#include <vector>

namespace sketchclip {

struct AdamOptions {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam over a fixed parameter list. Only parameters registered here move.
class Adam {
public:
    Adam(std::vector<Parameter*> params, AdamOptions options);

    void step();
    void zero_grad();

    const std::vector<Parameter*>& parameters() const { return params_; }
    long long steps() const { return t_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
    AdamOptions opt_;
    long long t_ = 0;
};

}  // namespace sketchclip
