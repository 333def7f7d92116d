#include "matprobe/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "matprobe/error.hpp"
#include "matprobe/rng.hpp"

namespace matprobe::numerics {

namespace {

Tape& same_tape(std::initializer_list<Var> vars) {
    Tape* t = nullptr;
    for (const Var& v : vars) {
        if (!v.valid()) throw NumericError("operation on an unset variable");
        if (t == nullptr) t = &v.tape();
        if (&v.tape() != t) throw NumericError("operands live on different tapes");
    }
    return *t;
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw NumericError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                       shape_string(b.shape()));
}

std::vector<std::size_t> matrix_shape(const Tensor& like, std::size_t rows, std::size_t cols) {
    if (like.rank() < 2) return {cols};
    return {rows, cols};
}

}  // namespace

double log1p_exp(double z) {
    return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

std::vector<double> softmax(std::span<const double> z) {
    std::vector<double> out(z.size());
    if (z.empty()) return out;
    const double m = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) total += out[i] = std::exp(z[i] - m);
    for (double& v : out) v /= total;
    return out;
}

Var affine(Var x, Var W, Var b) {
    Tape& t = same_tape({x, W, b});
    const Tensor& xv = x.value();
    const Tensor& wv = W.value();
    const Tensor& bv = b.value();
    if (wv.rank() != 2 || xv.cols() != wv.rows()) shape_error("affine", xv, wv);
    if (bv.size() != wv.cols()) shape_error("affine bias", wv, bv);
    Tensor y(matrix_shape(xv, xv.rows(), wv.cols()));
    y.mat().noalias() = xv.mat() * wv.mat();
    y.mat().rowwise() += ConstMatrixMap(bv.data(), 1, static_cast<Eigen::Index>(bv.size())).row(0);
    return t.record(std::move(y), {x.id(), W.id(), b.id()}, [](Tape::Context& c) {
        const auto g = c.grad_output().mat();
        if (c.wants(0)) c.grad(0).mat().noalias() += g * c.input(1).mat().transpose();
        if (c.wants(1)) c.grad(1).mat().noalias() += c.input(0).mat().transpose() * g;
        if (c.wants(2)) {
            Tensor& gb = c.grad(2);
            MatrixMap(gb.data(), 1, static_cast<Eigen::Index>(gb.size())) += g.colwise().sum();
        }
    });
}

Var matmul(Var a, Var b) {
    Tape& t = same_tape({a, b});
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (bv.rank() != 2 || av.cols() != bv.rows()) shape_error("matmul", av, bv);
    Tensor y(matrix_shape(av, av.rows(), bv.cols()));
    y.mat().noalias() = av.mat() * bv.mat();
    return t.record(std::move(y), {a.id(), b.id()}, [](Tape::Context& c) {
        const auto g = c.grad_output().mat();
        if (c.wants(0)) c.grad(0).mat().noalias() += g * c.input(1).mat().transpose();
        if (c.wants(1)) c.grad(1).mat().noalias() += c.input(0).mat().transpose() * g;
    });
}

Var add(Var a, Var b) {
    Tape& t = same_tape({a, b});
    if (a.value().shape() != b.value().shape()) shape_error("add", a.value(), b.value());
    Tensor y = a.value();
    y += b.value();
    return t.record(std::move(y), {a.id(), b.id()}, [](Tape::Context& c) {
        if (c.wants(0)) c.grad(0) += c.grad_output();
        if (c.wants(1)) c.grad(1) += c.grad_output();
    });
}

Var sub(Var a, Var b) {
    Tape& t = same_tape({a, b});
    if (a.value().shape() != b.value().shape()) shape_error("sub", a.value(), b.value());
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
    return t.record(std::move(y), {a.id(), b.id()}, [](Tape::Context& c) {
        if (c.wants(0)) c.grad(0) += c.grad_output();
        if (c.wants(1)) {
            Tensor& g = c.grad(1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= c.grad_output()[i];
        }
    });
}

Var mul(Var a, Var b) {
    Tape& t = same_tape({a, b});
    if (a.value().shape() != b.value().shape()) shape_error("mul", a.value(), b.value());
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
    return t.record(std::move(y), {a.id(), b.id()}, [](Tape::Context& c) {
        const Tensor& g = c.grad_output();
        for (std::size_t slot = 0; slot < 2; ++slot) {
            if (!c.wants(slot)) continue;
            Tensor& gi = c.grad(slot);
            const Tensor& other = c.input(1 - slot);
            for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * other[i];
        }
    });
}

Var scale(Var x, double s) {
    Tape& t = same_tape({x});
    Tensor y = x.value();
    for (double& v : y.values()) v *= s;
    return t.record(std::move(y), {x.id()}, [s](Tape::Context& c) {
        Tensor& g = c.grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * c.grad_output()[i];
    });
}

Var add_scalar(Var x, double s) {
    Tape& t = same_tape({x});
    Tensor y = x.value();
    for (double& v : y.values()) v += s;
    return t.record(std::move(y), {x.id()}, [](Tape::Context& c) { c.grad(0) += c.grad_output(); });
}

Var leaky_rect(Var x, double slope) {
    if (!(slope > 0.0 && slope < 1.0)) throw NumericError("leaky_rect: slope must lie in (0,1)");
    Tape& t = same_tape({x});
    Tensor y = x.value();
    for (double& v : y.values()) v = std::max(v, slope * v);
    return t.record(std::move(y), {x.id()}, [slope](Tape::Context& c) {
        Tensor& g = c.grad(0);
        const Tensor& xv = c.input(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c.grad_output()[i] * (xv[i] > 0.0 ? 1.0 : slope);
    });
}

Var abs(Var x) {
    Tape& t = same_tape({x});
    Tensor y = x.value();
    for (double& v : y.values()) v = std::abs(v);
    return t.record(std::move(y), {x.id()}, [](Tape::Context& c) {
        Tensor& g = c.grad(0);
        const Tensor& xv = c.input(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0);
            g[i] += c.grad_output()[i] * s;
        }
    });
}

Var reshape(Var x, std::vector<std::size_t> shape) {
    Tape& t = same_tape({x});
    Tensor y = x.value().reshaped(std::move(shape));
    return t.record(std::move(y), {x.id()}, [](Tape::Context& c) {
        Tensor& g = c.grad(0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += c.grad_output()[i];
    });
}

Var masked_softmax(Var scores, const std::vector<std::size_t>& mask) {
    Tape& t = same_tape({scores});
    const Tensor& s = scores.value();
    if (mask.empty()) throw NumericError("masked_softmax: empty mask");
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i : mask) {
        if (i >= s.size()) throw NumericError("masked_softmax: mask index " + std::to_string(i) + " out of range");
        m = std::max(m, s[i]);
    }
    Tensor y = Tensor::zeros_like(s);
    double total = 0.0;
    for (std::size_t i : mask) total += y[i] = std::exp(s[i] - m);
    for (std::size_t i : mask) y[i] /= total;
    return t.record(std::move(y), {scores.id()}, [mask](Tape::Context& c) {
        const Tensor& yv = c.output();
        const Tensor& g = c.grad_output();
        double dot = 0.0;
        for (std::size_t i : mask) dot += yv[i] * g[i];
        Tensor& gi = c.grad(0);
        for (std::size_t i : mask) gi[i] += yv[i] * (g[i] - dot);
    });
}

Var segment_softmax(Var scores, const std::vector<std::size_t>& segment, std::size_t segments) {
    Tape& t = same_tape({scores});
    const Tensor& s = scores.value();
    if (segment.size() != s.size()) throw NumericError("segment_softmax: one segment id per score required");
    std::vector<double> m(segments, -std::numeric_limits<double>::infinity());
    for (std::size_t e = 0; e < s.size(); ++e) {
        if (segment[e] >= segments) throw NumericError("segment_softmax: segment id out of range");
        m[segment[e]] = std::max(m[segment[e]], s[e]);
    }
    Tensor y = Tensor::zeros_like(s);
    std::vector<double> total(segments, 0.0);
    for (std::size_t e = 0; e < s.size(); ++e) total[segment[e]] += y[e] = std::exp(s[e] - m[segment[e]]);
    for (std::size_t e = 0; e < s.size(); ++e) y[e] /= total[segment[e]];
    return t.record(std::move(y), {scores.id()}, [segment, segments](Tape::Context& c) {
        const Tensor& yv = c.output();
        const Tensor& g = c.grad_output();
        std::vector<double> dot(segments, 0.0);
        for (std::size_t e = 0; e < g.size(); ++e) dot[segment[e]] += yv[e] * g[e];
        Tensor& gi = c.grad(0);
        for (std::size_t e = 0; e < g.size(); ++e) gi[e] += yv[e] * (g[e] - dot[segment[e]]);
    });
}

namespace {

// Row view that treats a rank-1 tensor as a column of scalars.
std::size_t row_count(const Tensor& x) { return x.rank() == 2 ? x.rows() : x.size(); }
std::size_t row_width(const Tensor& x) { return x.rank() == 2 ? x.cols() : 1; }
std::vector<std::size_t> rows_shape(const Tensor& like, std::size_t rows) {
    if (like.rank() == 2) return {rows, like.cols()};
    return {rows};
}

}  // namespace

Var gather_rows(Var x, const std::vector<std::size_t>& index) {
    Tape& t = same_tape({x});
    const Tensor& xv = x.value();
    const std::size_t n = row_count(xv);
    const std::size_t d = row_width(xv);
    Tensor y(rows_shape(xv, index.size()));
    for (std::size_t k = 0; k < index.size(); ++k) {
        if (index[k] >= n) throw NumericError("gather_rows: index out of range");
        std::copy_n(xv.data() + index[k] * d, d, y.data() + k * d);
    }
    return t.record(std::move(y), {x.id()}, [index, d](Tape::Context& c) {
        Tensor& gi = c.grad(0);
        const Tensor& g = c.grad_output();
        for (std::size_t k = 0; k < index.size(); ++k) {
            double* dst = gi.data() + index[k] * d;
            const double* src = g.data() + k * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

Var scatter_add_rows(Var x, const std::vector<std::size_t>& index, std::size_t rows) {
    Tape& t = same_tape({x});
    const Tensor& xv = x.value();
    if (index.size() != row_count(xv)) throw NumericError("scatter_add_rows: one index per row required");
    const std::size_t d = row_width(xv);
    Tensor y(rows_shape(xv, rows));
    for (std::size_t k = 0; k < index.size(); ++k) {
        if (index[k] >= rows) throw NumericError("scatter_add_rows: index out of range");
        double* dst = y.data() + index[k] * d;
        const double* src = xv.data() + k * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
    return t.record(std::move(y), {x.id()}, [index, d](Tape::Context& c) {
        Tensor& gi = c.grad(0);
        const Tensor& g = c.grad_output();
        for (std::size_t k = 0; k < index.size(); ++k) {
            double* dst = gi.data() + k * d;
            const double* src = g.data() + index[k] * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
}

Var concat_cols(Var a, Var b) {
    Tape& t = same_tape({a, b});
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != bv.rank() || av.rows() != bv.rows()) shape_error("concat_cols", av, bv);
    const std::size_t da = av.cols();
    const std::size_t db = bv.cols();
    Tensor y(matrix_shape(av, av.rows(), da + db));
    y.mat().leftCols(static_cast<Eigen::Index>(da)) = av.mat();
    y.mat().rightCols(static_cast<Eigen::Index>(db)) = bv.mat();
    return t.record(std::move(y), {a.id(), b.id()}, [da, db](Tape::Context& c) {
        const auto g = c.grad_output().mat();
        if (c.wants(0)) c.grad(0).mat() += g.leftCols(static_cast<Eigen::Index>(da));
        if (c.wants(1)) c.grad(1).mat() += g.rightCols(static_cast<Eigen::Index>(db));
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw NumericError("concat_rows: no inputs");
    Tape& t = parts.front().tape();
    const std::size_t d = parts.front().value().cols();
    std::size_t rows = 0;
    std::vector<std::size_t> ids;
    for (const Var& p : parts) {
        same_tape({parts.front(), p});
        if (p.value().cols() != d) shape_error("concat_rows", parts.front().value(), p.value());
        rows += p.value().rows();
        ids.push_back(p.id());
    }
    Tensor y({rows, d});
    std::size_t offset = 0;
    for (const Var& p : parts) {
        std::copy(p.value().values().begin(), p.value().values().end(), y.data() + offset);
        offset += p.value().size();
    }
    return t.record(std::move(y), std::move(ids), [n = parts.size()](Tape::Context& c) {
        std::size_t offset = 0;
        for (std::size_t slot = 0; slot < n; ++slot) {
            const std::size_t len = c.input(slot).size();
            if (c.wants(slot)) {
                Tensor& gi = c.grad(slot);
                for (std::size_t i = 0; i < len; ++i) gi[i] += c.grad_output()[offset + i];
            }
            offset += len;
        }
    });
}

Var scale_rows(Var x, Var w) {
    Tape& t = same_tape({x, w});
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (wv.size() != row_count(xv)) shape_error("scale_rows", xv, wv);
    Tensor y = xv;
    const std::size_t d = row_width(xv);
    for (std::size_t r = 0; r < wv.size(); ++r) {
        for (std::size_t j = 0; j < d; ++j) y[r * d + j] *= wv[r];
    }
    return t.record(std::move(y), {x.id(), w.id()}, [d](Tape::Context& c) {
        const Tensor& g = c.grad_output();
        const Tensor& xv = c.input(0);
        const Tensor& wv = c.input(1);
        if (c.wants(0)) {
            Tensor& gx = c.grad(0);
            for (std::size_t r = 0; r < wv.size(); ++r) {
                for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += g[r * d + j] * wv[r];
            }
        }
        if (c.wants(1)) {
            Tensor& gw = c.grad(1);
            for (std::size_t r = 0; r < wv.size(); ++r) {
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) acc += g[r * d + j] * xv[r * d + j];
                gw[r] += acc;
            }
        }
    });
}

Var select(Var x, const std::vector<std::size_t>& index) {
    Tape& t = same_tape({x});
    const Tensor& xv = x.value();
    Tensor y({index.size()});
    for (std::size_t k = 0; k < index.size(); ++k) {
        if (index[k] >= xv.size()) throw NumericError("select: index out of range");
        y[k] = xv[index[k]];
    }
    return t.record(std::move(y), {x.id()}, [index](Tape::Context& c) {
        Tensor& gi = c.grad(0);
        for (std::size_t k = 0; k < index.size(); ++k) gi[index[k]] += c.grad_output()[k];
    });
}

Var dropout(Var x, double rate, std::uint64_t seed, bool training) {
    if (!(rate >= 0.0 && rate < 1.0)) throw NumericError("dropout: rate must lie in [0,1)");
    if (!training || rate == 0.0) return x;
    Tape& t = same_tape({x});
    const double keep = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.value().size());
    for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = rng::uniform(seed, k) < rate ? 0.0 : keep;
    Tensor y = x.value();
    for (std::size_t k = 0; k < mask.size(); ++k) y[k] *= mask[k];
    return t.record(std::move(y), {x.id()}, [mask = std::move(mask)](Tape::Context& c) {
        Tensor& g = c.grad(0);
        for (std::size_t k = 0; k < mask.size(); ++k) g[k] += c.grad_output()[k] * mask[k];
    });
}

Var bce_with_logits(Var logits, const Tensor& targets) {
    Tape& t = same_tape({logits});
    const Tensor& z = logits.value();
    if (z.size() != targets.size() || z.size() == 0) shape_error("bce_with_logits", z, targets);
    double total = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double y = targets[i];
        if (!(y >= 0.0 && y <= 1.0)) throw NumericError("bce_with_logits: targets must lie in [0,1]");
        total += log1p_exp(z[i]) - y * z[i];
    }
    const double n = static_cast<double>(z.size());
    return t.record(Tensor::scalar(total / n), {logits.id()}, [targets, n](Tape::Context& c) {
        const Tensor& zv = c.input(0);
        const double g = c.grad_output().item() / n;
        Tensor& gi = c.grad(0);
        for (std::size_t i = 0; i < zv.size(); ++i) {
            const double sigma = 1.0 / (1.0 + std::exp(-zv[i]));
            gi[i] += g * (sigma - targets[i]);
        }
    });
}

Var cross_entropy(Var logits, std::size_t class_index) {
    Tape& t = same_tape({logits});
    const Tensor& z = logits.value();
    if (class_index >= z.size()) {
        throw NumericError("cross_entropy: class index " + std::to_string(class_index) + " out of range for " +
                           std::to_string(z.size()) + " logits");
    }
    const double m = *std::max_element(z.values().begin(), z.values().end());
    double total = 0.0;
    for (double v : z.values()) total += std::exp(v - m);
    const double loss = m + std::log(total) - z[class_index];
    return t.record(Tensor::scalar(loss), {logits.id()}, [class_index](Tape::Context& c) {
        const auto p = softmax(c.input(0).values());
        const double g = c.grad_output().item();
        Tensor& gi = c.grad(0);
        for (std::size_t i = 0; i < p.size(); ++i) gi[i] += g * (p[i] - (i == class_index ? 1.0 : 0.0));
    });
}

Var sum(Var x) {
    Tape& t = same_tape({x});
    double total = 0.0;
    for (double v : x.value().values()) total += v;
    return t.record(Tensor::scalar(total), {x.id()}, [](Tape::Context& c) {
        const double g = c.grad_output().item();
        for (double& v : c.grad(0).values()) v += g;
    });
}

Var mean(Var x) {
    const std::size_t n = x.value().size();
    if (n == 0) throw NumericError("mean of an empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var maximum(Var a, Var b) {
    Tape& t = same_tape({a, b});
    if (a.value().shape() != b.value().shape()) shape_error("maximum", a.value(), b.value());
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(y[i], b.value()[i]);
    return t.record(std::move(y), {a.id(), b.id()}, [](Tape::Context& c) {
        const Tensor& av = c.input(0);
        const Tensor& bv = c.input(1);
        const Tensor& g = c.grad_output();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const std::size_t slot = av[i] >= bv[i] ? 0 : 1;
            if (c.wants(slot)) c.grad(slot)[i] += g[i];
        }
    });
}

}  // namespace matprobe::numerics
