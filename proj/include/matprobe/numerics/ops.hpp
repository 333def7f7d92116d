#pragma once

#include <cstdint>
#include <vector>

#include "matprobe/numerics/tape.hpp"

namespace matprobe::numerics {

// Shape conventions: rank-2 operands are (rows x cols); a rank-1 operand
// passed where a matrix is expected is treated as a single row and the
// result keeps rank 1.

/// y = x W + b with x (n x d_in) or (d_in), W (d_in x d_out), b (d_out).
Var affine(Var x, Var W, Var b);
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double s);
Var add_scalar(Var x, double s);
Var leaky_rect(Var x, double slope);
Var abs(Var x);
Var reshape(Var x, std::vector<std::size_t> shape);

/// Softmax over the flat indices in `mask`; zero elsewhere.
Var masked_softmax(Var scores, const std::vector<std::size_t>& mask);
/// Softmax of a rank-1 score vector within each group of equal segment id.
Var segment_softmax(Var scores, const std::vector<std::size_t>& segment, std::size_t segments);

/// out[k] = x[index[k]] (rows).
Var gather_rows(Var x, const std::vector<std::size_t>& index);
/// out[index[k]] += x[k] (rows), out has `rows` rows.
Var scatter_add_rows(Var x, const std::vector<std::size_t>& index, std::size_t rows);
Var concat_cols(Var a, Var b);
Var concat_rows(const std::vector<Var>& parts);
/// Multiplies row r of x by w[r].
Var scale_rows(Var x, Var w);
/// Flat element selection, rank-1 result.
Var select(Var x, const std::vector<std::size_t>& index);

/// Inverted dropout. Element k is dropped iff uniform(seed, k) < rate.
Var dropout(Var x, double rate, std::uint64_t seed, bool training);

/// Mean elementwise binary cross-entropy on logits.
Var bce_with_logits(Var logits, const Tensor& targets);
/// -log softmax(logits)[class_index] for a rank-1 logit vector.
Var cross_entropy(Var logits, std::size_t class_index);

Var sum(Var x);
Var mean(Var x);
/// Elementwise maximum; ties route the gradient to `a`.
Var maximum(Var a, Var b);

// Plain helpers, no tape.
[[nodiscard]] double log1p_exp(double z);
[[nodiscard]] std::vector<double> softmax(std::span<const double> z);

}  // namespace matprobe::numerics
