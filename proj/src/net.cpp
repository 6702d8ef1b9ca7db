#include "modeconn/net.hpp"

#include <algorithm>
#include <cmath>

namespace modeconn {

namespace {

std::int64_t product(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

void check_batch(const Model& model, const Tensor& batch, const std::vector<int>* labels) {
    const auto& in = model.spec.input_shape;
    if (batch.shape.size() != 4 || batch.shape[1] != in[0] || batch.shape[2] != in[1] ||
        batch.shape[3] != in[2])
        throw std::invalid_argument("batch shape " + shape_str(batch.shape) +
                                    " does not match model input (N," + std::to_string(in[0]) +
                                    "," + std::to_string(in[1]) + "," + std::to_string(in[2]) +
                                    ")");
    if (labels) {
        if (static_cast<int>(labels->size()) != batch.shape[0])
            throw std::invalid_argument("label count does not match batch size");
        for (int y : *labels)
            if (y < 0 || y >= model.spec.num_classes)
                throw std::invalid_argument("label " + std::to_string(y) + " outside [0," +
                                            std::to_string(model.spec.num_classes) + ")");
    }
}

struct LayerCache {
    Tensor out;                       // activation after the layer
    std::vector<std::int64_t> argmax;  // maxpool only: chosen input index per output element
};

// Runs the layer chain on one batch and keeps every activation for the
// reverse pass.
struct Pass {
    const Model& model;
    std::vector<std::vector<int>> shapes;  // per-layer activation shapes (sample-level)
    std::vector<LayerCache> acts;          // acts[0] is the input batch
    int n;                                 // batch size

    explicit Pass(const Model& m, const Tensor& batch)
        : model(m), shapes(m.spec.activation_shapes()), n(batch.shape[0]) {
        acts.resize(model.spec.layers.size() + 1);
        acts[0].out = batch;
        for (std::size_t li = 0; li < model.spec.layers.size(); ++li) run_layer(li);
    }

    const double* params(std::size_t li) const {
        return model.weights.data.data() + model.weights.layout[li].offset;
    }

    Tensor batch_tensor(std::size_t shape_idx) const {
        std::vector<int> s{n};
        for (int d : shapes[shape_idx]) s.push_back(d);
        return Tensor(s);
    }

    void run_layer(std::size_t li) {
        const auto& l = model.spec.layers[li];
        const Tensor& x = acts[li].out;
        LayerCache& c = acts[li + 1];

        if (std::holds_alternative<Dense>(l)) {
            const auto& d = std::get<Dense>(l);
            const double* w = params(li);
            const double* b = w + layer_bias_offset(l);
            c.out = batch_tensor(li + 1);
            for (int i = 0; i < n; ++i) {
                const double* xi = x.data.data() + static_cast<std::int64_t>(i) * d.in;
                double* oi = c.out.data.data() + static_cast<std::int64_t>(i) * d.out;
                for (int o = 0; o < d.out; ++o) {
                    const double* wr = w + static_cast<std::int64_t>(o) * d.in;
                    double s = b[o];
                    for (int k = 0; k < d.in; ++k) s += wr[k] * xi[k];
                    oi[o] = s;
                }
            }
        } else if (std::holds_alternative<Conv2D>(l)) {
            const auto& cv = std::get<Conv2D>(l);
            const double* w = params(li);
            const double* b = w + layer_bias_offset(l);
            const auto& is = shapes[li];
            const auto& os = shapes[li + 1];
            int ih = is[1], iw = is[2], oh = os[1], ow = os[2];
            std::int64_t in_sz = product(is), out_sz = product(os);
            c.out = batch_tensor(li + 1);
            for (int i = 0; i < n; ++i) {
                const double* xi = x.data.data() + i * in_sz;
                double* oi = c.out.data.data() + i * out_sz;
                for (int oc = 0; oc < cv.out_ch; ++oc) {
                    const double* woc =
                        w + static_cast<std::int64_t>(oc) * cv.in_ch * cv.kernel * cv.kernel;
                    for (int y = 0; y < oh; ++y) {
                        for (int xo = 0; xo < ow; ++xo) {
                            double s = b[oc];
                            for (int ic = 0; ic < cv.in_ch; ++ic) {
                                const double* xc = xi + static_cast<std::int64_t>(ic) * ih * iw;
                                const double* wk = woc + static_cast<std::int64_t>(ic) * cv.kernel *
                                                             cv.kernel;
                                for (int ky = 0; ky < cv.kernel; ++ky) {
                                    int sy = y * cv.stride - cv.padding + ky;
                                    if (sy < 0 || sy >= ih) continue;
                                    for (int kx = 0; kx < cv.kernel; ++kx) {
                                        int sx = xo * cv.stride - cv.padding + kx;
                                        if (sx < 0 || sx >= iw) continue;
                                        s += wk[ky * cv.kernel + kx] * xc[sy * iw + sx];
                                    }
                                }
                            }
                            oi[(static_cast<std::int64_t>(oc) * oh + y) * ow + xo] = s;
                        }
                    }
                }
            }
        } else if (std::holds_alternative<ReLU>(l)) {
            c.out = x;
            for (double& v : c.out.data) v = v > 0.0 ? v : 0.0;
        } else if (std::holds_alternative<Flatten>(l)) {
            c.out = x;
            c.out.shape = {n, static_cast<int>(product(shapes[li + 1]))};
        } else {
            const auto& mp = std::get<MaxPool2D>(l);
            const auto& is = shapes[li];
            const auto& os = shapes[li + 1];
            int ch = is[0], ih = is[1], iw = is[2], oh = os[1], ow = os[2];
            std::int64_t in_sz = product(is), out_sz = product(os);
            c.out = batch_tensor(li + 1);
            c.argmax.assign(static_cast<std::size_t>(n) * out_sz, 0);
            for (int i = 0; i < n; ++i) {
                const double* xi = x.data.data() + i * in_sz;
                double* oi = c.out.data.data() + i * out_sz;
                std::int64_t* ai = c.argmax.data() + i * out_sz;
                for (int cc = 0; cc < ch; ++cc) {
                    for (int y = 0; y < oh; ++y) {
                        for (int xo = 0; xo < ow; ++xo) {
                            std::int64_t best_idx = -1;
                            double best = 0.0;
                            for (int ky = 0; ky < mp.kernel; ++ky) {
                                for (int kx = 0; kx < mp.kernel; ++kx) {
                                    std::int64_t idx =
                                        (static_cast<std::int64_t>(cc) * ih + y * mp.kernel + ky) *
                                            iw +
                                        xo * mp.kernel + kx;
                                    double v = xi[idx];
                                    // ties go to the lowest flat index
                                    if (best_idx < 0 || v > best) {
                                        best = v;
                                        best_idx = idx;
                                    }
                                }
                            }
                            std::int64_t oidx = (static_cast<std::int64_t>(cc) * oh + y) * ow + xo;
                            oi[oidx] = best;
                            ai[oidx] = best_idx;
                        }
                    }
                }
            }
        }
    }

    // Reverse pass. dout is the gradient at the network output; returns the
    // gradient at the input and fills wgrad.
    Tensor backward(Tensor dout, WeightVector& wgrad) const {
        for (std::size_t li = model.spec.layers.size(); li-- > 0;) {
            const auto& l = model.spec.layers[li];
            const Tensor& x = acts[li].out;
            const LayerCache& c = acts[li + 1];
            Tensor din;

            if (std::holds_alternative<Dense>(l)) {
                const auto& d = std::get<Dense>(l);
                const double* w = params(li);
                double* gw = wgrad.data.data() + wgrad.layout[li].offset;
                double* gb = gw + layer_bias_offset(l);
                din = Tensor(x.shape);
                for (int i = 0; i < n; ++i) {
                    const double* xi = x.data.data() + static_cast<std::int64_t>(i) * d.in;
                    const double* gi = dout.data.data() + static_cast<std::int64_t>(i) * d.out;
                    double* di = din.data.data() + static_cast<std::int64_t>(i) * d.in;
                    for (int o = 0; o < d.out; ++o) {
                        double g = gi[o];
                        if (g == 0.0) continue;
                        const double* wr = w + static_cast<std::int64_t>(o) * d.in;
                        double* gwr = gw + static_cast<std::int64_t>(o) * d.in;
                        gb[o] += g;
                        for (int k = 0; k < d.in; ++k) {
                            gwr[k] += g * xi[k];
                            di[k] += g * wr[k];
                        }
                    }
                }
            } else if (std::holds_alternative<Conv2D>(l)) {
                const auto& cv = std::get<Conv2D>(l);
                const double* w = params(li);
                double* gw = wgrad.data.data() + wgrad.layout[li].offset;
                double* gb = gw + layer_bias_offset(l);
                const auto& is = shapes[li];
                const auto& os = shapes[li + 1];
                int ih = is[1], iw = is[2], oh = os[1], ow = os[2];
                std::int64_t in_sz = product(is), out_sz = product(os);
                din = Tensor(x.shape);
                for (int i = 0; i < n; ++i) {
                    const double* xi = x.data.data() + i * in_sz;
                    const double* gi = dout.data.data() + i * out_sz;
                    double* di = din.data.data() + i * in_sz;
                    for (int oc = 0; oc < cv.out_ch; ++oc) {
                        const double* woc =
                            w + static_cast<std::int64_t>(oc) * cv.in_ch * cv.kernel * cv.kernel;
                        double* gwoc =
                            gw + static_cast<std::int64_t>(oc) * cv.in_ch * cv.kernel * cv.kernel;
                        for (int y = 0; y < oh; ++y) {
                            for (int xo = 0; xo < ow; ++xo) {
                                double g = gi[(static_cast<std::int64_t>(oc) * oh + y) * ow + xo];
                                if (g == 0.0) continue;
                                gb[oc] += g;
                                for (int ic = 0; ic < cv.in_ch; ++ic) {
                                    const double* xc = xi + static_cast<std::int64_t>(ic) * ih * iw;
                                    double* dc = di + static_cast<std::int64_t>(ic) * ih * iw;
                                    const double* wk =
                                        woc + static_cast<std::int64_t>(ic) * cv.kernel * cv.kernel;
                                    double* gwk =
                                        gwoc + static_cast<std::int64_t>(ic) * cv.kernel * cv.kernel;
                                    for (int ky = 0; ky < cv.kernel; ++ky) {
                                        int sy = y * cv.stride - cv.padding + ky;
                                        if (sy < 0 || sy >= ih) continue;
                                        for (int kx = 0; kx < cv.kernel; ++kx) {
                                            int sx = xo * cv.stride - cv.padding + kx;
                                            if (sx < 0 || sx >= iw) continue;
                                            gwk[ky * cv.kernel + kx] += g * xc[sy * iw + sx];
                                            dc[sy * iw + sx] += g * wk[ky * cv.kernel + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            } else if (std::holds_alternative<ReLU>(l)) {
                din = dout;
                for (std::size_t k = 0; k < din.data.size(); ++k)
                    if (x.data[k] <= 0.0) din.data[k] = 0.0;
            } else if (std::holds_alternative<Flatten>(l)) {
                din = dout;
                din.shape = x.shape;
            } else {
                std::int64_t in_sz = product(shapes[li]);
                std::int64_t out_sz = product(shapes[li + 1]);
                din = Tensor(x.shape);
                for (int i = 0; i < n; ++i) {
                    const double* gi = dout.data.data() + i * out_sz;
                    const std::int64_t* ai = c.argmax.data() + i * out_sz;
                    double* di = din.data.data() + i * in_sz;
                    for (std::int64_t k = 0; k < out_sz; ++k) di[ai[k]] += gi[k];
                }
            }
            dout = std::move(din);
        }
        return dout;
    }
};

// Per-sample stable softmax cross-entropy; writes probabilities into probs.
double cross_entropy(const Tensor& logits, const std::vector<int>& labels, Tensor& probs) {
    int n = logits.shape[0];
    int nc = logits.shape[1];
    probs = Tensor(logits.shape);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* li = logits.data.data() + static_cast<std::int64_t>(i) * nc;
        double* pi = probs.data.data() + static_cast<std::int64_t>(i) * nc;
        double m = li[0];
        for (int k = 1; k < nc; ++k) m = std::max(m, li[k]);
        double z = 0.0;
        for (int k = 0; k < nc; ++k) {
            pi[k] = std::exp(li[k] - m);
            z += pi[k];
        }
        for (int k = 0; k < nc; ++k) pi[k] /= z;
        total += std::log(z) - (li[labels[static_cast<std::size_t>(i)]] - m);
    }
    return total / n;
}

}  // namespace

Tensor forward_logits(const Model& model, const Tensor& batch) {
    check_batch(model, batch, nullptr);
    Pass pass(model, batch);
    Tensor logits = pass.acts.back().out;
    logits.shape = {pass.n, model.spec.num_classes};
    require_finite(logits, "activations");
    return logits;
}

ForwardResult forward(const Model& model, const Tensor& batch, const std::vector<int>& labels) {
    check_batch(model, batch, &labels);
    Pass pass(model, batch);
    ForwardResult r;
    r.logits = pass.acts.back().out;
    r.logits.shape = {pass.n, model.spec.num_classes};
    require_finite(r.logits, "activations");
    Tensor probs;
    r.loss = cross_entropy(r.logits, labels, probs);
    if (!std::isfinite(r.loss)) throw std::runtime_error("non-finite loss");
    return r;
}

BackpropResult backprop(const Model& model, const Tensor& batch, const std::vector<int>& labels) {
    check_batch(model, batch, &labels);
    Pass pass(model, batch);
    BackpropResult r;
    r.logits = pass.acts.back().out;
    r.logits.shape = {pass.n, model.spec.num_classes};
    require_finite(r.logits, "activations");

    Tensor probs;
    r.loss = cross_entropy(r.logits, labels, probs);
    if (!std::isfinite(r.loss)) throw std::runtime_error("non-finite loss");

    // d(mean loss)/dlogits = (softmax - onehot) / N
    int n = pass.n;
    int nc = model.spec.num_classes;
    Tensor dlogits = probs;
    for (int i = 0; i < n; ++i) {
        double* gi = dlogits.data.data() + static_cast<std::int64_t>(i) * nc;
        gi[labels[static_cast<std::size_t>(i)]] -= 1.0;
        for (int k = 0; k < nc; ++k) gi[k] /= n;
    }
    dlogits.shape = pass.acts.back().out.shape;

    r.weight_grad = make_weight_vector(model.spec);
    r.input_grad = pass.backward(std::move(dlogits), r.weight_grad);
    require_finite(r.input_grad, "input gradient");
    if (!all_finite(r.weight_grad.data)) throw std::runtime_error("non-finite weight gradient");
    return r;
}

WeightVector grad_weights(const Model& model, const Tensor& batch, const std::vector<int>& labels) {
    return backprop(model, batch, labels).weight_grad;
}

Tensor grad_input(const Model& model, const Tensor& batch, const std::vector<int>& labels) {
    return backprop(model, batch, labels).input_grad;
}

Tensor softmax(const Tensor& logits) {
    Tensor probs;
    std::vector<int> dummy(static_cast<std::size_t>(logits.shape[0]), 0);
    cross_entropy(logits, dummy, probs);
    return probs;
}

std::vector<int> predict(const Model& model, const Tensor& batch) {
    Tensor logits = forward_logits(model, batch);
    int n = logits.shape[0];
    int nc = logits.shape[1];
    std::vector<int> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* li = logits.data.data() + static_cast<std::int64_t>(i) * nc;
        int best = 0;
        for (int k = 1; k < nc; ++k)
            if (li[k] > li[best]) best = k;
        out[static_cast<std::size_t>(i)] = best;
    }
    return out;
}

}  // namespace modeconn
