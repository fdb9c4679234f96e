#pragma once

// Naive recursive STL semantics, written straight from the textbook
// definitions and sharing nothing with the production evaluator except the
// predicate functions. Derived operators are desugared here:
//   false = !true, a | b = !(!a & !b), F_I a = true U_I a, G_I a = !F_I !a.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "qpm/stl.hpp"

namespace oracle {

using qpm::TrajectoryView;
using qpm::stl::Formula;
using qpm::stl::Op;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double rob(const Formula& f, TrajectoryView s, std::size_t t);

inline double rob_until(const Formula& a, const Formula& b, std::size_t lo, std::size_t hi, TrajectoryView s,
                        std::size_t t, bool a_is_true) {
    double best = -kInf;
    for (std::size_t tp = t + lo; tp <= t + hi; ++tp) {
        double inner = kInf;
        if (!a_is_true)
            for (std::size_t tpp = t; tpp <= tp; ++tpp) inner = std::min(inner, rob(a, s, tpp));
        best = std::max(best, std::min(rob(b, s, tp), inner));
    }
    return best;
}

inline double rob(const Formula& f, TrajectoryView s, std::size_t t) {
    switch (f.op()) {
        case Op::truth: return kInf;
        case Op::falsity: return -kInf;
        case Op::predicate: return f.predicate()(s.state(t));
        case Op::negation: return -rob(f.lhs(), s, t);
        case Op::conjunction: return std::min(rob(f.lhs(), s, t), rob(f.rhs(), s, t));
        case Op::disjunction: return -std::min(-rob(f.lhs(), s, t), -rob(f.rhs(), s, t));
        case Op::until: return rob_until(f.lhs(), f.rhs(), f.interval().lo, f.interval().hi, s, t, false);
        case Op::eventually: return rob_until(f.lhs(), f.lhs(), f.interval().lo, f.interval().hi, s, t, true);
        case Op::globally: {
            // !F !a: robustness of !a is -rob(a)
            double best = -kInf;
            for (std::size_t tp = t + f.interval().lo; tp <= t + f.interval().hi; ++tp)
                best = std::max(best, -rob(f.lhs(), s, tp));
            return -best;
        }
    }
    return std::nan("");
}

inline bool sat(const Formula& f, TrajectoryView s, std::size_t t) {
    switch (f.op()) {
        case Op::truth: return true;
        case Op::falsity: return false;
        case Op::predicate: return f.predicate()(s.state(t)) > 0;
        case Op::negation: return !sat(f.lhs(), s, t);
        case Op::conjunction: return sat(f.lhs(), s, t) && sat(f.rhs(), s, t);
        case Op::disjunction: return sat(f.lhs(), s, t) || sat(f.rhs(), s, t);
        case Op::until:
            for (std::size_t tp = t + f.interval().lo; tp <= t + f.interval().hi; ++tp) {
                if (!sat(f.rhs(), s, tp)) continue;
                bool held = true;
                for (std::size_t tpp = t; tpp <= tp && held; ++tpp) held = sat(f.lhs(), s, tpp);
                if (held) return true;
            }
            return false;
        case Op::eventually:
            for (std::size_t tp = t + f.interval().lo; tp <= t + f.interval().hi; ++tp)
                if (sat(f.lhs(), s, tp)) return true;
            return false;
        case Op::globally:
            for (std::size_t tp = t + f.interval().lo; tp <= t + f.interval().hi; ++tp)
                if (!sat(f.lhs(), s, tp)) return false;
            return true;
    }
    return false;
}

/// Random formulas over every node kind and predicate form.
class FormulaGen {
public:
    FormulaGen(std::uint64_t seed, std::size_t dim) : rng_(seed), dim_(dim) {}

    Formula formula(int depth) {
        using qpm::stl::TimeInterval;
        const int kind = depth <= 0 ? static_cast<int>(pick(10)) % 3 : static_cast<int>(pick(10));
        switch (kind) {
            case 0: return Formula::atom(predicate());
            case 1: return pick(6) == 0 ? Formula::truth() : Formula::atom(predicate());
            case 2: return pick(6) == 0 ? Formula::falsity() : Formula::atom(predicate());
            case 3: return Formula::negation(formula(depth - 1));
            case 4: return Formula::conjunction(formula(depth - 1), formula(depth - 1));
            case 5: return Formula::disjunction(formula(depth - 1), formula(depth - 1));
            case 6: return Formula::until(formula(depth - 1), interval(), formula(depth - 1));
            case 7: return Formula::eventually(interval(), formula(depth - 1));
            case 8: return Formula::globally(interval(), formula(depth - 1));
            default: return Formula::conjunction(formula(depth - 1), Formula::atom(predicate()));
        }
    }

    qpm::stl::Predicate predicate() {
        using qpm::stl::Predicate;
        switch (pick(5)) {
            case 0:
            case 1: {
                std::vector<std::pair<std::size_t, double>> terms;
                const std::size_t nterms = 1 + pick(dim_);
                for (std::size_t i = 0; i < nterms; ++i) terms.emplace_back(pick(dim_), small_int());
                return Predicate::affine(terms, small_int());
            }
            case 2:
                return Predicate::inf_ball({pick(dim_)}, {small_int()}, 1.0 + static_cast<double>(pick(3)));
            case 3:
                return Predicate::inf_ball_outside({pick(dim_)}, {small_int()}, static_cast<double>(pick(3)));
            default:
                return Predicate::distance({pick(dim_)}, {pick(dim_)}, static_cast<double>(pick(3)));
        }
    }

    qpm::stl::TimeInterval interval() {
        const std::size_t lo = pick(3);
        return {lo, lo + 1 + pick(3 - lo)};
    }

    /// H in [lookahead + 1, 10]; values drawn from a coarse grid half the time
    /// so that robustness ties at zero occur.
    qpm::Trajectory trajectory(std::size_t lookahead) {
        const std::size_t h = std::min<std::size_t>(10, lookahead + 1 + pick(4));
        qpm::Trajectory tr(dim_, std::max(h, lookahead + 1));
        const bool coarse = pick(2) == 0;
        for (std::size_t t = 0; t < tr.horizon(); ++t)
            for (std::size_t i = 0; i < dim_; ++i)
                tr.at(t, i) = coarse ? small_int() : std::uniform_real_distribution<double>(-3.0, 3.0)(rng_);
        return tr;
    }

    std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

private:
    double small_int() { return static_cast<double>(static_cast<int>(pick(5)) - 2); }

    std::mt19937_64 rng_;
    std::size_t dim_;
};

}  // namespace oracle
