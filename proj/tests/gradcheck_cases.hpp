#pragma once

// Central-difference checks for every primitive tensor op, shared between
// the unit suite and the acceptance suite.

#include <functional>
#include <string>
#include <vector>

#include "mtkd/gradcheck.hpp"
#include "mtkd/nn.hpp"
#include "mtkd/random.hpp"
#include "mtkd/tensor.hpp"

namespace mtkd_tests {

using mtkd::GradCheckReport;
using mtkd::IntMat;
using mtkd::Rng;
using mtkd::Shape;
using TD = mtkd::Tensor<double>;

inline TD rand_param(const Shape& shape, Rng& rng, const std::string& name, double lo = -1.0,
                     double hi = 1.0) {
    std::vector<double> d(mtkd::numel(shape));
    for (auto& x : d) x = mtkd::uniform_range(rng, lo, hi);
    return TD::param(shape, std::move(d), name);
}

// Scalar projection with fixed pseudo-random weights so every output
// coordinate influences the loss.
inline TD project(const TD& t, uint64_t salt) {
    Rng rng(salt);
    std::vector<double> w(t.size());
    for (auto& x : w) x = mtkd::uniform_range(rng, -1.0, 1.0);
    TD wt = TD::from(t.shape(), std::move(w));
    return mtkd::sum_all(mtkd::mul(t, wt));
}

struct GradCheckCase {
    std::string name;
    std::function<GradCheckReport()> run;
};

inline std::vector<GradCheckCase> primitive_op_cases() {
    using namespace mtkd;
    std::vector<GradCheckCase> cases;

    auto check1 = [&](const std::string& name, Shape shape, auto fn, double lo = -1.0,
                      double hi = 1.0) {
        cases.push_back({name, [=]() mutable {
                             Rng r(fnv1a(name));
                             std::vector<TD> params{rand_param(shape, r, "x", lo, hi)};
                             auto builder = [&]() { return project(fn(params[0]), 99); };
                             return gradient_check(builder, params, 1e-5, 1e-4);
                         }});
    };
    auto check2 = [&](const std::string& name, Shape sa, Shape sb, auto fn) {
        cases.push_back({name, [=]() mutable {
                             Rng r(fnv1a(name));
                             std::vector<TD> params{rand_param(sa, r, "a"),
                                                    rand_param(sb, r, "b")};
                             auto builder = [&]() {
                                 return project(fn(params[0], params[1]), 55);
                             };
                             return gradient_check(builder, params, 1e-5, 1e-4);
                         }});
    };

    // relu and log keep inputs away from their non-differentiable/undefined
    // regions by a margin much larger than the fd step
    check1("relu", {2, 3}, [](const TD& x) { return relu(x); }, 0.01, 1.0);
    check1("tanh", {2, 3}, [](const TD& x) { return tanh(x); });
    check1("sigmoid", {2, 3}, [](const TD& x) { return sigmoid(x); });
    check1("exp", {2, 3}, [](const TD& x) { return exp(x); });
    check1("log", {2, 3}, [](const TD& x) { return log(x); }, 0.5, 2.0);
    check1("softmax_axis0", {3, 2}, [](const TD& x) { return softmax_axis(x, 0); });
    check1("softmax_axis1", {3, 2}, [](const TD& x) { return softmax_axis(x, 1); });
    check1("softmax_axis_r3", {2, 3, 2}, [](const TD& x) { return softmax_axis(x, 1); });
    check1("mean_axis", {2, 3}, [](const TD& x) { return mean_axis(x, 1); });
    check1("sum_axis", {2, 3, 2}, [](const TD& x) { return sum_axis(x, 0); });
    check1("mean_all", {2, 3}, [](const TD& x) { return mean_all(x); });
    check1("sum_all", {2, 3}, [](const TD& x) { return sum_all(x); });
    check1("transpose", {3, 4}, [](const TD& x) { return transpose(x); });
    check1("transpose_r3", {2, 3, 4}, [](const TD& x) { return transpose(x); });
    check1("reshape", {2, 6}, [](const TD& x) { return reshape(x, {3, 4}); });
    check1("slice", {2, 5, 2}, [](const TD& x) { return slice(x, 1, 1, 3); });
    check1("scale", {2, 3}, [](const TD& x) { return scale(x, 2.5); });
    check1("add_const", {2, 3}, [](const TD& x) { return add_const(x, -1.25); });
    check1("layer_norm", {3, 4}, [](const TD& x) { return layer_norm(x); });

    // max_axis: values spread so the argmax is stable under the fd step
    cases.push_back({"max_axis", [] {
                         std::vector<double> vals{0.1, 0.9, 0.4, 0.7, 0.2, 0.5};
                         std::vector<TD> params{TD::param({2, 3}, vals, "x")};
                         auto builder = [&]() { return project(max_axis(params[0], 1), 3); };
                         return gradient_check(builder, params, 1e-5, 1e-4);
                     }});

    check2("add", {2, 3}, {2, 3}, [](const TD& a, const TD& b) { return add(a, b); });
    check2("add_bcast", {2, 3}, {3}, [](const TD& a, const TD& b) { return add(a, b); });
    check2("sub", {2, 3}, {2, 3}, [](const TD& a, const TD& b) { return sub(a, b); });
    check2("mul", {2, 3}, {3}, [](const TD& a, const TD& b) { return mul(a, b); });
    check2("matmul", {3, 4}, {4, 2}, [](const TD& a, const TD& b) { return matmul(a, b); });
    check2("matmul_b3x2", {2, 3, 4}, {4, 2},
           [](const TD& a, const TD& b) { return matmul(a, b); });
    check2("matmul_b3x3", {2, 3, 4}, {2, 4, 3},
           [](const TD& a, const TD& b) { return matmul(a, b); });
    check2("concat_ax1", {2, 3}, {2, 2}, [](const TD& a, const TD& b) {
        return concat(std::vector<TD>{a, b}, 1);
    });
    check2("concat_ax0", {2, 3}, {1, 3}, [](const TD& a, const TD& b) {
        return concat(std::vector<TD>{a, b}, 0);
    });

    cases.push_back({"embed_lookup", [] {
                         Rng r(11);
                         std::vector<TD> params{rand_param({5, 3}, r, "table")};
                         IntMat ids(2, 3);
                         ids.v = {0, 4, 2, 2, 1, 0};
                         auto builder = [&]() {
                             return project(embed_lookup(params[0], ids), 21);
                         };
                         return gradient_check(builder, params, 1e-5, 1e-4);
                     }});
    cases.push_back({"reorder_time", [] {
                         Rng r(12);
                         std::vector<TD> params{rand_param({2, 3, 2}, r, "x")};
                         IntMat idx(2, 3);
                         idx.v = {2, 1, 0, 1, 0, 2};
                         auto builder = [&]() {
                             return project(reorder_time(params[0], idx), 31);
                         };
                         return gradient_check(builder, params, 1e-5, 1e-4);
                     }});
    cases.push_back({"cross_entropy", [] {
                         Rng r(13);
                         std::vector<TD> params{rand_param({3, 4}, r, "logits")};
                         std::vector<int32_t> labels{1, 3, 0};
                         auto builder = [&]() {
                             return cross_entropy_mean(params[0], labels);
                         };
                         return gradient_check(builder, params, 1e-5, 1e-4);
                     }});
    cases.push_back({"group_nll", [] {
                         Rng r(14);
                         std::vector<TD> params{rand_param({5, 1}, r, "scores")};
                         std::vector<std::vector<int32_t>> groups{{0, 1, 2}, {3, 4}};
                         std::vector<int32_t> positives{1, 4};
                         auto builder = [&]() {
                             return group_nll(params[0], groups, positives);
                         };
                         return gradient_check(builder, params, 1e-5, 1e-4);
                     }});
    return cases;
}

} // namespace mtkd_tests
