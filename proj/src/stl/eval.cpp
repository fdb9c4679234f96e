#include <algorithm>
#include <limits>

#include "qpm/error.hpp"
#include "qpm/stl.hpp"

namespace qpm::stl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Each signal holds values for t = 0 .. len-1 where len = H - lookahead(node).
// A parent with extra lookahead reads children at t' <= t + hi, always in range.

std::vector<double> rob_signal(const Formula& f, TrajectoryView s) {
    const std::size_t len = s.horizon() - f.lookahead();
    std::vector<double> out(len);
    switch (f.op()) {
        case Op::truth:
            std::fill(out.begin(), out.end(), kInf);
            break;
        case Op::falsity:
            std::fill(out.begin(), out.end(), -kInf);
            break;
        case Op::predicate:
            for (std::size_t t = 0; t < len; ++t) out[t] = f.predicate()(s.state(t));
            break;
        case Op::negation: {
            auto a = rob_signal(f.lhs(), s);
            for (std::size_t t = 0; t < len; ++t) out[t] = -a[t];
            break;
        }
        case Op::conjunction:
        case Op::disjunction: {
            auto a = rob_signal(f.lhs(), s);
            auto b = rob_signal(f.rhs(), s);
            const bool conj = f.op() == Op::conjunction;
            for (std::size_t t = 0; t < len; ++t)
                out[t] = conj ? std::min(a[t], b[t]) : std::max(a[t], b[t]);
            break;
        }
        case Op::eventually:
        case Op::globally: {
            auto a = rob_signal(f.lhs(), s);
            const auto [lo, hi] = f.interval();
            const bool ev = f.op() == Op::eventually;
            for (std::size_t t = 0; t < len; ++t) {
                double acc = ev ? -kInf : kInf;
                for (std::size_t u = t + lo; u <= t + hi; ++u) acc = ev ? std::max(acc, a[u]) : std::min(acc, a[u]);
                out[t] = acc;
            }
            break;
        }
        case Op::until: {
            auto a = rob_signal(f.lhs(), s);
            auto b = rob_signal(f.rhs(), s);
            const auto [lo, hi] = f.interval();
            for (std::size_t t = 0; t < len; ++t) {
                double prefix = kInf;  // inf of lhs over [t, u]
                for (std::size_t u = t; u < t + lo; ++u) prefix = std::min(prefix, a[u]);
                double best = -kInf;
                for (std::size_t u = t + lo; u <= t + hi; ++u) {
                    prefix = std::min(prefix, a[u]);
                    best = std::max(best, std::min(b[u], prefix));
                }
                out[t] = best;
            }
            break;
        }
    }
    return out;
}

std::vector<char> sat_signal(const Formula& f, TrajectoryView s) {
    const std::size_t len = s.horizon() - f.lookahead();
    std::vector<char> out(len);
    switch (f.op()) {
        case Op::truth:
            std::fill(out.begin(), out.end(), 1);
            break;
        case Op::falsity:
            std::fill(out.begin(), out.end(), 0);
            break;
        case Op::predicate:
            for (std::size_t t = 0; t < len; ++t) out[t] = f.predicate()(s.state(t)) > 0.0;
            break;
        case Op::negation: {
            auto a = sat_signal(f.lhs(), s);
            for (std::size_t t = 0; t < len; ++t) out[t] = !a[t];
            break;
        }
        case Op::conjunction:
        case Op::disjunction: {
            auto a = sat_signal(f.lhs(), s);
            auto b = sat_signal(f.rhs(), s);
            const bool conj = f.op() == Op::conjunction;
            for (std::size_t t = 0; t < len; ++t) out[t] = conj ? (a[t] && b[t]) : (a[t] || b[t]);
            break;
        }
        case Op::eventually:
        case Op::globally: {
            auto a = sat_signal(f.lhs(), s);
            const auto [lo, hi] = f.interval();
            const bool ev = f.op() == Op::eventually;
            for (std::size_t t = 0; t < len; ++t) {
                bool acc = !ev;
                for (std::size_t u = t + lo; u <= t + hi; ++u) acc = ev ? (acc || a[u]) : (acc && a[u]);
                out[t] = acc;
            }
            break;
        }
        case Op::until: {
            auto a = sat_signal(f.lhs(), s);
            auto b = sat_signal(f.rhs(), s);
            const auto [lo, hi] = f.interval();
            for (std::size_t t = 0; t < len; ++t) {
                bool prefix = true;
                for (std::size_t u = t; u < t + lo; ++u) prefix = prefix && a[u];
                bool found = false;
                for (std::size_t u = t + lo; u <= t + hi && prefix && !found; ++u) {
                    prefix = prefix && a[u];
                    found = prefix && b[u];
                }
                out[t] = found;
            }
            break;
        }
    }
    return out;
}

}  // namespace

void check_evaluable(const Formula& f, TrajectoryView s, std::size_t t) {
    if (f.required_dim() > s.dim())
        throw DimensionError("formula references x" + std::to_string(f.required_dim() - 1) +
                             " but states have dimension " + std::to_string(s.dim()));
    if (s.horizon() == 0 || t + f.lookahead() > s.horizon() - 1)
        throw HorizonError("evaluating at t=" + std::to_string(t) + " needs lookahead " +
                           std::to_string(f.lookahead()) + " but horizon is " + std::to_string(s.horizon()));
}

std::vector<double> robustness_signal(const Formula& f, TrajectoryView s) {
    check_evaluable(f, s, 0);
    return rob_signal(f, s);
}

std::vector<char> satisfaction_signal(const Formula& f, TrajectoryView s) {
    check_evaluable(f, s, 0);
    return sat_signal(f, s);
}

double robustness(const Formula& f, TrajectoryView s, std::size_t t) {
    check_evaluable(f, s, t);
    return rob_signal(f, s)[t];
}

bool satisfies(const Formula& f, TrajectoryView s, std::size_t t) {
    check_evaluable(f, s, t);
    return sat_signal(f, s)[t] != 0;
}

std::vector<double> robustness_batch(const Formula& f, const TrajectoryBatch& batch, Exec exec) {
    std::vector<double> out(batch.size());
    if (batch.empty()) return out;
    check_evaluable(f, batch[0], 0);
    parallel_for(batch.size(), exec, [&](std::size_t k) { out[k] = robustness(f, batch[k], 0); });
    return out;
}

}  // namespace qpm::stl
