#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ecnet/rng.hpp"
#include "ecnet/tape.hpp"
#include "ecnet/tensor.hpp"

namespace ecnet {

enum class Activation { identity, tanh, relu };

struct DenseLayer {
    Param w;  // out x in
    Param b;  // 1 x out
    Activation act = Activation::identity;

    DenseLayer() = default;
    DenseLayer(std::size_t in, std::size_t out, Activation a, Rng& rng,
               const std::string& name = "dense") {
        Tensor wt(out, in);
        const double s = 1.0 / std::sqrt(static_cast<double>(in));
        for (double& x : wt.data) x = s * rng.normal();
        w = Param(std::move(wt), name + ".w");
        b = Param(Tensor(1, out), name + ".b");
        act = a;
    }

    Value forward(Tape& t, Value x) {
        Value y = t.add_rowvec(t.matmul_nt(x, t.leaf(w)), t.leaf(b));
        switch (act) {
            case Activation::tanh: return t.tanh(y);
            case Activation::relu: return t.relu(y);
            case Activation::identity: return y;
        }
        return y;
    }

    Tensor forward_plain(const Tensor& x) const {
        Tensor y = ecnet::matmul_nt(x, w.value);
        for (std::size_t i = 0; i < y.rows; ++i)
            for (std::size_t j = 0; j < y.cols; ++j) {
                double v = y(i, j) + b.value(0, j);
                if (act == Activation::tanh) v = std::tanh(v);
                else if (act == Activation::relu) v = v > 0.0 ? v : 0.0;
                y(i, j) = v;
            }
        return y;
    }

    void collect(std::vector<Param*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

struct Mlp {
    std::vector<DenseLayer> layers;

    Mlp() = default;
    // dims = {in, hidden..., out}; hidden layers use `hidden`, last layer `last`.
    Mlp(const std::vector<std::size_t>& dims, Activation hidden, Activation last, Rng& rng,
        const std::string& name = "mlp") {
        for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
            const bool is_last = (i + 2 == dims.size());
            layers.emplace_back(dims[i], dims[i + 1], is_last ? last : hidden, rng,
                                name + ".l" + std::to_string(i));
        }
    }

    Value forward(Tape& t, Value x) {
        Value y = x;
        for (DenseLayer& l : layers) y = l.forward(t, y);
        return y;
    }

    Tensor forward_plain(const Tensor& x) const {
        Tensor y = x;
        for (const DenseLayer& l : layers) y = l.forward_plain(y);
        return y;
    }

    void collect(std::vector<Param*>& out) {
        for (DenseLayer& l : layers) l.collect(out);
    }
};

}  // namespace ecnet
