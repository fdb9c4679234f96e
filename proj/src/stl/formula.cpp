#include <algorithm>
#include <charconv>
#include <cmath>

#include "qpm/error.hpp"
#include "qpm/stl.hpp"

namespace qpm::stl {

namespace {

std::string fmt_num(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string join_vars(const std::vector<std::size_t>& idx) {
    std::string out;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (k) out += ", ";
        out += "x" + std::to_string(idx[k]);
    }
    return out;
}

void require_nonempty(const std::vector<std::size_t>& idx, const char* what) {
    if (idx.empty()) throw DomainError(std::string(what) + ": empty index set");
}

}  // namespace

Predicate Predicate::affine(std::vector<std::pair<std::size_t, double>> terms, double offset) {
    std::sort(terms.begin(), terms.end());
    std::vector<std::pair<std::size_t, double>> merged;
    for (auto [i, w] : terms) {
        if (!merged.empty() && merged.back().first == i)
            merged.back().second += w;
        else
            merged.emplace_back(i, w);
    }
    std::erase_if(merged, [](const auto& t) { return t.second == 0.0; });
    Predicate p;
    p.form_ = Form::affine;
    p.terms_ = std::move(merged);
    p.offset_ = offset;
    return p;
}

Predicate Predicate::inf_ball(std::vector<std::size_t> idx, std::vector<double> center, double radius) {
    require_nonempty(idx, "linf");
    if (idx.size() != center.size()) throw DimensionError("linf: index and center sizes differ");
    Predicate p;
    p.form_ = Form::inf_ball;
    p.idx_a_ = std::move(idx);
    p.center_ = std::move(center);
    p.radius_ = radius;
    return p;
}

Predicate Predicate::inf_ball_outside(std::vector<std::size_t> idx, std::vector<double> center,
                                      double radius) {
    Predicate p = inf_ball(std::move(idx), std::move(center), radius);
    p.form_ = Form::inf_ball_outside;
    return p;
}

Predicate Predicate::distance(std::vector<std::size_t> a, std::vector<std::size_t> b, double radius) {
    require_nonempty(a, "dist");
    if (a.size() != b.size()) throw DimensionError("dist: index sets differ in size");
    Predicate p;
    p.form_ = Form::distance;
    p.idx_a_ = std::move(a);
    p.idx_b_ = std::move(b);
    p.radius_ = radius;
    return p;
}

double Predicate::operator()(std::span<const double> s) const {
    switch (form_) {
        case Form::affine: {
            double acc = offset_;
            for (auto [i, w] : terms_) acc += w * s[i];
            return acc;
        }
        case Form::inf_ball:
        case Form::inf_ball_outside: {
            double norm = 0.0;
            for (std::size_t k = 0; k < idx_a_.size(); ++k)
                norm = std::max(norm, std::abs(s[idx_a_[k]] - center_[k]));
            return form_ == Form::inf_ball ? radius_ - norm : norm - radius_;
        }
        case Form::distance: {
            double sq = 0.0;
            for (std::size_t k = 0; k < idx_a_.size(); ++k) {
                double d = s[idx_a_[k]] - s[idx_b_[k]];
                sq += d * d;
            }
            return std::sqrt(sq) - radius_;
        }
    }
    return 0.0;
}

std::size_t Predicate::required_dim() const {
    std::size_t m = 0;
    for (auto [i, w] : terms_) m = std::max(m, i + 1);
    for (auto i : idx_a_) m = std::max(m, i + 1);
    for (auto i : idx_b_) m = std::max(m, i + 1);
    return m;
}

std::string Predicate::to_string() const {
    switch (form_) {
        case Form::affine: {
            std::string out;
            for (auto [i, w] : terms_) {
                double mag = std::abs(w);
                if (out.empty())
                    out += w < 0 ? "-" : "";
                else
                    out += w < 0 ? " - " : " + ";
                if (mag != 1.0) out += fmt_num(mag) + "*";
                out += "x" + std::to_string(i);
            }
            if (out.empty())
                out = fmt_num(offset_);
            else if (offset_ != 0.0)
                out += (offset_ < 0 ? " - " : " + ") + fmt_num(std::abs(offset_));
            return out + " > 0";
        }
        case Form::inf_ball:
        case Form::inf_ball_outside: {
            std::string c;
            for (std::size_t k = 0; k < center_.size(); ++k) c += (k ? ", " : "") + fmt_num(center_[k]);
            return "linf(" + join_vars(idx_a_) + "; " + c + ")" + (form_ == Form::inf_ball ? " < " : " > ") +
                   fmt_num(radius_);
        }
        case Form::distance:
            return "dist(" + join_vars(idx_a_) + "; " + join_vars(idx_b_) + ") > " + fmt_num(radius_);
    }
    return {};
}

struct Formula::Node {
    Op op = Op::truth;
    TimeInterval interval{};
    Predicate pred{};
    std::vector<Formula> kids;
    std::size_t lookahead = 0;
    std::size_t dim = 0;
    std::size_t depth = 1;
};

namespace {

void check_interval(TimeInterval i) {
    if (i.lo >= i.hi)
        throw IntervalError("interval [" + std::to_string(i.lo) + "," + std::to_string(i.hi) +
                            "] must satisfy lo < hi");
}

}  // namespace

Formula Formula::truth() {
    auto n = std::make_shared<Node>();
    n->op = Op::truth;
    return Formula(std::move(n));
}

Formula Formula::falsity() {
    auto n = std::make_shared<Node>();
    n->op = Op::falsity;
    return Formula(std::move(n));
}

Formula Formula::atom(Predicate p) {
    auto n = std::make_shared<Node>();
    n->op = Op::predicate;
    n->dim = p.required_dim();
    n->pred = std::move(p);
    return Formula(std::move(n));
}

Formula Formula::negation(Formula f) {
    auto n = std::make_shared<Node>();
    n->op = Op::negation;
    n->lookahead = f.lookahead();
    n->dim = f.required_dim();
    n->depth = f.depth() + 1;
    n->kids = {std::move(f)};
    return Formula(std::move(n));
}

namespace {

template <class NodeT>
void fill_binary(NodeT& n, std::size_t extra) {
    const auto& a = n.kids[0];
    const auto& b = n.kids[1];
    n.lookahead = extra + std::max(a.lookahead(), b.lookahead());
    n.dim = std::max(a.required_dim(), b.required_dim());
    n.depth = 1 + std::max(a.depth(), b.depth());
}

}  // namespace

Formula Formula::conjunction(Formula a, Formula b) {
    auto n = std::make_shared<Node>();
    n->op = Op::conjunction;
    n->kids = {std::move(a), std::move(b)};
    fill_binary(*n, 0);
    return Formula(std::move(n));
}

Formula Formula::disjunction(Formula a, Formula b) {
    auto n = std::make_shared<Node>();
    n->op = Op::disjunction;
    n->kids = {std::move(a), std::move(b)};
    fill_binary(*n, 0);
    return Formula(std::move(n));
}

Formula Formula::until(Formula a, TimeInterval i, Formula b) {
    check_interval(i);
    auto n = std::make_shared<Node>();
    n->op = Op::until;
    n->interval = i;
    n->kids = {std::move(a), std::move(b)};
    fill_binary(*n, i.hi);
    return Formula(std::move(n));
}

Formula Formula::eventually(TimeInterval i, Formula f) {
    check_interval(i);
    auto n = std::make_shared<Node>();
    n->op = Op::eventually;
    n->interval = i;
    n->lookahead = i.hi + f.lookahead();
    n->dim = f.required_dim();
    n->depth = f.depth() + 1;
    n->kids = {std::move(f)};
    return Formula(std::move(n));
}

Formula Formula::globally(TimeInterval i, Formula f) {
    Formula g = eventually(i, std::move(f));
    auto n = std::make_shared<Node>(*g.node_);
    n->op = Op::globally;
    return Formula(std::move(n));
}

Op Formula::op() const noexcept { return node_->op; }

const Formula& Formula::lhs() const {
    if (node_->kids.empty()) throw DomainError("formula node has no operands");
    return node_->kids[0];
}

const Formula& Formula::rhs() const {
    if (node_->kids.size() < 2) throw DomainError("formula node is not binary");
    return node_->kids[1];
}

TimeInterval Formula::interval() const { return node_->interval; }
const Predicate& Formula::predicate() const { return node_->pred; }
std::size_t Formula::lookahead() const noexcept { return node_->lookahead; }
std::size_t Formula::required_dim() const noexcept { return node_->dim; }
std::size_t Formula::depth() const noexcept { return node_->depth; }

std::string Formula::to_string() const {
    auto iv = [this] {
        return "[" + std::to_string(node_->interval.lo) + "," + std::to_string(node_->interval.hi) + "]";
    };
    switch (node_->op) {
        case Op::truth: return "true";
        case Op::falsity: return "false";
        case Op::predicate: return node_->pred.to_string();
        case Op::negation: return "!(" + lhs().to_string() + ")";
        case Op::conjunction: return "(" + lhs().to_string() + " & " + rhs().to_string() + ")";
        case Op::disjunction: return "(" + lhs().to_string() + " | " + rhs().to_string() + ")";
        case Op::until: return "(" + lhs().to_string() + " U" + iv() + " " + rhs().to_string() + ")";
        case Op::eventually: return "F" + iv() + "(" + lhs().to_string() + ")";
        case Op::globally: return "G" + iv() + "(" + lhs().to_string() + ")";
    }
    return {};
}

bool operator==(const Formula& a, const Formula& b) {
    if (a.node_ == b.node_) return true;
    const auto& x = *a.node_;
    const auto& y = *b.node_;
    return x.op == y.op && x.interval == y.interval && x.pred == y.pred && x.kids == y.kids;
}

}  // namespace qpm::stl
