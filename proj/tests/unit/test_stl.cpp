#include <doctest.h>

#include <cmath>

#include "qpm/error.hpp"
#include "qpm/stl.hpp"
#include "stl_oracle.hpp"

using namespace qpm;
using namespace qpm::stl;

namespace {

Trajectory traj1(std::vector<double> xs) { return Trajectory(xs, 1, xs.size()); }

}  // namespace

TEST_CASE("parse: right-turn property") {
    const auto f = parse_formula("G[0,20](x0 <= 37)", 1);
    REQUIRE(f.op() == Op::globally);
    CHECK(f.interval() == TimeInterval{0, 20});
    REQUIRE(f.lhs().op() == Op::predicate);
    CHECK(f.lhs().predicate() == Predicate::affine({{0, -1.0}}, 37.0));
    CHECK(f.lookahead() == 20);
}

TEST_CASE("parse: literals and errors") {
    CHECK(parse_formula("true", 1).op() == Op::truth);
    CHECK(parse_formula("false", 1).op() == Op::falsity);
    CHECK_THROWS_AS(parse_formula("F[2,1](x0 > 0)", 1), IntervalError);
    CHECK_THROWS_AS(parse_formula("F[1,1](x0 > 0)", 1), IntervalError);
    CHECK_THROWS_AS(parse_formula("x3 > 0", 2), ParseError);
    CHECK_THROWS_AS(parse_formula("(x0 > 0", 1), ParseError);
    CHECK_THROWS_AS(parse_formula("x0 > 0 &", 1), ParseError);
    CHECK_THROWS_AS(parse_formula("dist(x0; x1) < 3", 2), ParseError);
    try {
        parse_formula("x0 > 0 ) ", 1);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.position() == 7);
    }
}

TEST_CASE("parse: precedence and associativity") {
    const auto p = parse_formula("x0 > 0", 1);
    const auto q = parse_formula("x0 < 1", 1);
    const auto r = parse_formula("x0 > 2", 1);
    CHECK(parse_formula("x0 > 0 | x0 < 1 & x0 > 2", 1) == Formula::disjunction(p, Formula::conjunction(q, r)));
    CHECK(parse_formula("x0 > 0 U[0,1] x0 < 1 U[1,2] x0 > 2", 1) ==
          Formula::until(p, {0, 1}, Formula::until(q, {1, 2}, r)));
    CHECK(parse_formula("!x0 > 0 & x0 < 1", 1) == Formula::conjunction(Formula::negation(p), q));
    CHECK(parse_formula("F[0,2] G[1,3] x0 > 0", 1) == Formula::eventually({0, 2}, Formula::globally({1, 3}, p)));
    CHECK(parse_formula("F[0,2] G[1,3] x0 > 0", 1).lookahead() == 5);
}

TEST_CASE("parse: predicate forms") {
    CHECK(parse_formula("2*x0 - x1 + 3 > x1", 2).predicate() == Predicate::affine({{0, 2.0}, {1, -2.0}}, 3.0));
    CHECK(parse_formula("x0 < x0", 1).predicate() == Predicate::affine({}, 0.0));
    const auto ball = parse_formula("linf(x0, x1; 15, 15) <= 14", 2).predicate();
    CHECK(ball.form() == Predicate::Form::inf_ball);
    CHECK(ball.radius() == 14.0);
    CHECK(parse_formula("linf(x1; 2) > 1", 2).predicate().form() == Predicate::Form::inf_ball_outside);
    CHECK(parse_formula("dist(x0, x1; x2, x3) >= 5", 4).predicate() ==
          Predicate::distance({0, 1}, {2, 3}, 5.0));
}

TEST_CASE("parse: pretty-printer round trip") {
    const char* texts[] = {
        "G[0,29](linf(x0, x1; 10, 10) >= 3.5 & linf(x0, x1; 15, 15) <= 14)",
        "F[0,22] G[0,22] (x0 >= 17.5)",
        "G[0,20](dist(x0, x1; x2, x3) > 5) & G[0,20](x0 <= 37)",
        "!(x0 > 1 | true) U[1,4] (0.25*x1 - x0 < -2.5e-3)",
        "false | F[0,1] x1 >= x0",
    };
    for (const char* t : texts) {
        const auto f = parse_formula(t, 4);
        CHECK(parse_formula(f.to_string(), 4) == f);
    }
    oracle::FormulaGen gen(11, 3);
    for (int i = 0; i < 300; ++i) {
        const auto f = gen.formula(3);
        CHECK(parse_formula(f.to_string(), 3) == f);
    }
}

TEST_CASE("boolean semantics examples") {
    CHECK(satisfies(parse_formula("x0 > 0", 1), traj1({1.0})));
    CHECK_FALSE(satisfies(parse_formula("(x0 > 0) U[0,1] (x0 < 0)", 1), traj1({1.0, -1.0})));
    CHECK_FALSE(satisfies(parse_formula("!true", 1), traj1({0.0})));
    // Robustness exactly zero maps to false under strict semantics.
    CHECK_FALSE(satisfies(parse_formula("x0 >= 17.5", 1), traj1({17.5})));
    CHECK(robustness(parse_formula("x0 >= 17.5", 1), traj1({17.5})) == 0.0);
}

TEST_CASE("robustness examples") {
    CHECK(robustness(parse_formula("x0 >= 17.5", 1), traj1({20.0})) == 2.5);
    CHECK(robustness(parse_formula("!(x0 >= 17.5)", 1), traj1({20.0})) == -2.5);
    CHECK(robustness(parse_formula("F[0,2](x0 - 17.5 > 0)", 1), traj1({10, 16, 19})) == 1.5);
    CHECK(robustness(parse_formula("true", 1), traj1({0})) == std::numeric_limits<double>::infinity());
    CHECK(robustness(parse_formula("linf(x0, x1; 15, 15) < 14", 2), Trajectory({16, 12}, 2, 1)) == 11.0);
    CHECK(robustness(parse_formula("linf(x0, x1; 10, 10) > 3.5", 2), Trajectory({12, 11}, 2, 1)) == -1.5);
    CHECK(robustness(parse_formula("dist(x0, x1; x2, x3) > 5", 4), Trajectory({0, 0, 3, 4}, 4, 1)) == 0.0);
}

TEST_CASE("horizon and dimension checks") {
    const auto f = parse_formula("F[0,2](x0 > 0)", 1);
    CHECK_THROWS_AS(robustness(f, traj1({1, 2})), HorizonError);
    CHECK_THROWS_AS(robustness(f, traj1({1, 2, 3}), 1), HorizonError);
    CHECK_NOTHROW(robustness(f, traj1({1, 2, 3, 4}), 1));
    CHECK_THROWS_AS(satisfies(f, traj1({1, 2})), HorizonError);
    CHECK_THROWS_AS(robustness(parse_formula("x1 > 0", 2), traj1({1, 2})), DimensionError);
}

TEST_CASE("derived operators match their desugared forms") {
    oracle::FormulaGen gen(5, 2);
    for (int i = 0; i < 300; ++i) {
        const auto a = gen.formula(2);
        const auto b = gen.formula(1);
        const TimeInterval iv = gen.interval();
        const auto ev = Formula::eventually(iv, a);
        const auto ev_sugar = Formula::until(Formula::truth(), iv, a);
        const auto gl = Formula::globally(iv, a);
        const auto gl_sugar = Formula::negation(Formula::eventually(iv, Formula::negation(a)));
        const auto dis = Formula::disjunction(a, b);
        const auto dis_sugar = Formula::negation(Formula::conjunction(Formula::negation(a), Formula::negation(b)));
        const auto tr = gen.trajectory(std::max(ev.lookahead(), dis.lookahead()));
        for (std::size_t t = 0; t + ev.lookahead() < tr.horizon(); ++t) {
            CHECK(robustness(ev, tr, t) == robustness(ev_sugar, tr, t));
            CHECK(robustness(gl, tr, t) == robustness(gl_sugar, tr, t));
            CHECK(satisfies(ev, tr, t) == satisfies(ev_sugar, tr, t));
            CHECK(satisfies(gl, tr, t) == satisfies(gl_sugar, tr, t));
        }
        for (std::size_t t = 0; t + dis.lookahead() < tr.horizon(); ++t) {
            CHECK(robustness(dis, tr, t) == robustness(dis_sugar, tr, t));
            CHECK(satisfies(dis, tr, t) == satisfies(dis_sugar, tr, t));
        }
        CHECK(robustness(Formula::falsity(), tr) == robustness(Formula::negation(Formula::truth()), tr));
    }
}

TEST_CASE("evaluator equals the recursive oracle") {
    oracle::FormulaGen gen(2024, 3);
    for (int i = 0; i < 400; ++i) {
        const auto f = gen.formula(3);
        const auto tr = gen.trajectory(f.lookahead());
        const auto sig = robustness_signal(f, tr);
        const auto bsig = satisfaction_signal(f, tr);
        REQUIRE(sig.size() == tr.horizon() - f.lookahead());
        for (std::size_t t = 0; t < sig.size(); ++t) {
            const double want = oracle::rob(f, tr, t);
            CHECK(sig[t] == want);
            CHECK(robustness(f, tr, t) == want);
            CHECK(static_cast<bool>(bsig[t]) == oracle::sat(f, tr, t));
            if (want > 0) CHECK(satisfies(f, tr, t));
            if (want < 0) CHECK_FALSE(satisfies(f, tr, t));
        }
    }
}

TEST_CASE("negation duality and conjunction is the minimum") {
    oracle::FormulaGen gen(99, 2);
    for (int i = 0; i < 200; ++i) {
        const auto a = gen.formula(2);
        const auto b = gen.formula(2);
        const auto c = Formula::conjunction(a, b);
        const auto tr = gen.trajectory(c.lookahead());
        CHECK(robustness(Formula::negation(a), tr) == -robustness(a, tr));
        CHECK(robustness(c, tr) == std::min(robustness(a, tr), robustness(b, tr)));
    }
}
