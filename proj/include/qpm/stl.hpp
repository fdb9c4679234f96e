#pragma once

// Signal temporal logic over discrete-time trajectories.
//
// Formulas are immutable trees with shared children. Temporal operators carry
// integer step intervals [lo, hi] with lo < hi. Robustness of `true` is +inf,
// so derived operators evaluate to exactly the same bits as their desugared
// forms: F_I p == true U_I p, G_I p == !F_I !p, p | q == !(!p & !q).

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qpm/parallel.hpp"
#include "qpm/trajectory.hpp"

namespace qpm::stl {

struct TimeInterval {
    std::size_t lo = 0;
    std::size_t hi = 0;
    friend bool operator==(const TimeInterval&, const TimeInterval&) = default;
};

/// Atomic predicate g(s) > 0 over one state vector.
class Predicate {
public:
    enum class Form {
        affine,            ///< sum_i w_i s_i + c
        inf_ball,          ///< r - ||s_A - c||_inf
        inf_ball_outside,  ///< ||s_A - c||_inf - r
        distance,          ///< ||s_A - s_B||_2 - r
    };

    /// Terms with zero weight are dropped; terms are sorted by index.
    static Predicate affine(std::vector<std::pair<std::size_t, double>> terms, double offset);
    static Predicate inf_ball(std::vector<std::size_t> idx, std::vector<double> center, double radius);
    static Predicate inf_ball_outside(std::vector<std::size_t> idx, std::vector<double> center,
                                      double radius);
    static Predicate distance(std::vector<std::size_t> a, std::vector<std::size_t> b, double radius);

    double operator()(std::span<const double> state) const;

    Form form() const noexcept { return form_; }
    const std::vector<std::pair<std::size_t, double>>& terms() const noexcept { return terms_; }
    double offset() const noexcept { return offset_; }
    const std::vector<std::size_t>& indices() const noexcept { return idx_a_; }
    const std::vector<std::size_t>& other_indices() const noexcept { return idx_b_; }
    const std::vector<double>& center() const noexcept { return center_; }
    double radius() const noexcept { return radius_; }

    /// Smallest state dimension on which the predicate is defined.
    std::size_t required_dim() const;
    std::string to_string() const;

    friend bool operator==(const Predicate&, const Predicate&) = default;

private:
    Form form_ = Form::affine;
    std::vector<std::pair<std::size_t, double>> terms_;
    double offset_ = 0.0;
    std::vector<std::size_t> idx_a_;
    std::vector<std::size_t> idx_b_;
    std::vector<double> center_;
    double radius_ = 0.0;
};

enum class Op { truth, falsity, predicate, negation, conjunction, disjunction, until, eventually, globally };

class Formula {
public:
    static Formula truth();
    static Formula falsity();
    static Formula atom(Predicate p);
    static Formula negation(Formula f);
    static Formula conjunction(Formula a, Formula b);
    static Formula disjunction(Formula a, Formula b);
    /// Throws IntervalError unless lo < hi.
    static Formula until(Formula a, TimeInterval i, Formula b);
    static Formula eventually(TimeInterval i, Formula f);
    static Formula globally(TimeInterval i, Formula f);

    Op op() const noexcept;
    /// Operand of unary nodes, left operand of binary nodes.
    const Formula& lhs() const;
    const Formula& rhs() const;
    TimeInterval interval() const;
    const Predicate& predicate() const;

    /// Steps past t needed to evaluate at t (sum of nested interval upper bounds).
    std::size_t lookahead() const noexcept;
    std::size_t required_dim() const noexcept;
    std::size_t depth() const noexcept;

    /// Canonical fully-parenthesized text; parse_formula(to_string()) == *this.
    std::string to_string() const;

    friend bool operator==(const Formula& a, const Formula& b);

private:
    struct Node;
    explicit Formula(std::shared_ptr<const Node> n) : node_(std::move(n)) {}
    std::shared_ptr<const Node> node_;
};

/// Parse formula text. Variables are x0..x{state_dim-1}.
///
///   formula   := disj
///   disj      := conj ('|' conj)*
///   conj      := until ('&' until)*
///   until     := unary ('U' interval until)?
///   unary     := '!' unary | ('F' | 'G') interval unary | atom
///   atom      := 'true' | 'false' | '(' formula ')' | predicate
///   predicate := linexpr cmp linexpr
///              | 'linf' '(' vars ';' numbers ')' cmp number
///              | 'dist' '(' vars ';' vars ')' ('>' | '>=') number
///   linexpr   := ['-'] term (('+' | '-') term)*
///   term      := number | var | number '*' var
///   interval  := '[' integer ',' integer ']'
///   cmp       := '<' | '<=' | '>' | '>='
///
/// Non-strict comparisons map to the same g as strict ones.
Formula parse_formula(std::string_view text, std::size_t state_dim);

/// Throws HorizonError / DimensionError if `f` cannot be evaluated on `s` at `t`.
void check_evaluable(const Formula& f, TrajectoryView s, std::size_t t);

bool satisfies(const Formula& f, TrajectoryView s, std::size_t t = 0);
double robustness(const Formula& f, TrajectoryView s, std::size_t t = 0);

/// Robustness at every t with t + lookahead <= H - 1.
std::vector<double> robustness_signal(const Formula& f, TrajectoryView s);
std::vector<char> satisfaction_signal(const Formula& f, TrajectoryView s);

/// Robustness at t=0 of every trajectory in the batch.
std::vector<double> robustness_batch(const Formula& f, const TrajectoryBatch& batch, Exec exec = Exec::parallel);

}  // namespace qpm::stl
