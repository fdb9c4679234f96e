#include <cctype>
#include <charconv>
#include <optional>

#include "qpm/error.hpp"
#include "qpm/stl.hpp"

namespace qpm::stl {

namespace {

enum class Cmp { lt, le, gt, ge };

class Parser {
public:
    Parser(std::string_view text, std::size_t dim) : text_(text), dim_(dim) {}

    Formula parse() {
        Formula f = disjunction();
        skip_ws();
        if (pos_ != text_.size()) fail("unexpected '" + std::string(1, text_[pos_]) + "'");
        return f;
    }

private:
    std::string_view text_;
    std::size_t dim_;
    std::size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& msg) const { throw ParseError(msg, pos_); }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    char peek() {
        skip_ws();
        return pos_ < text_.size() ? text_[pos_] : '\0';
    }

    bool accept(char c) {
        if (peek() != c) return false;
        ++pos_;
        return true;
    }

    void expect(char c) {
        if (!accept(c)) fail(std::string("expected '") + c + "'");
    }

    /// Keyword match that does not swallow a longer identifier.
    bool accept_word(std::string_view w) {
        skip_ws();
        if (text_.substr(pos_, w.size()) != w) return false;
        std::size_t end = pos_ + w.size();
        if (end < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[end])) || text_[end] == '_'))
            return false;
        pos_ = end;
        return true;
    }

    /// Temporal operator letter followed directly by an interval, e.g. F[0,3].
    bool accept_temporal(char letter) {
        skip_ws();
        if (pos_ + 1 < text_.size() && text_[pos_] == letter) {
            std::size_t p = pos_ + 1;
            while (p < text_.size() && std::isspace(static_cast<unsigned char>(text_[p]))) ++p;
            if (p < text_.size() && text_[p] == '[') {
                ++pos_;
                return true;
            }
        }
        return false;
    }

    Formula disjunction() {
        Formula f = conjunction();
        while (accept('|')) f = Formula::disjunction(f, conjunction());
        return f;
    }

    Formula conjunction() {
        Formula f = until();
        while (accept('&')) f = Formula::conjunction(f, until());
        return f;
    }

    Formula until() {
        Formula lhs = unary();
        if (accept_temporal('U')) {
            TimeInterval iv = interval();
            return Formula::until(lhs, iv, until());
        }
        return lhs;
    }

    Formula unary() {
        if (accept('!')) return Formula::negation(unary());
        if (accept_temporal('F')) {
            TimeInterval iv = interval();
            return Formula::eventually(iv, unary());
        }
        if (accept_temporal('G')) {
            TimeInterval iv = interval();
            return Formula::globally(iv, unary());
        }
        return atom();
    }

    Formula atom() {
        if (accept_word("true")) return Formula::truth();
        if (accept_word("false")) return Formula::falsity();
        if (accept('(')) {
            Formula f = disjunction();
            expect(')');
            return f;
        }
        return Formula::atom(predicate());
    }

    TimeInterval interval() {
        expect('[');
        std::size_t at = pos_;
        std::size_t lo = integer();
        expect(',');
        std::size_t hi = integer();
        expect(']');
        if (lo >= hi) {
            pos_ = at;
            throw IntervalError("interval [" + std::to_string(lo) + "," + std::to_string(hi) +
                                "] must satisfy lo < hi (position " + std::to_string(at) + ")");
        }
        return {lo, hi};
    }

    std::size_t integer() {
        skip_ws();
        std::size_t v = 0;
        auto [ptr, ec] = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), v);
        if (ec != std::errc() || ptr == text_.data() + pos_) fail("expected non-negative integer");
        pos_ = static_cast<std::size_t>(ptr - text_.data());
        return v;
    }

    std::optional<double> try_number() {
        skip_ws();
        std::size_t start = pos_;
        if (start < text_.size() && (text_[start] == '+' || text_[start] == '-')) ++start;
        if (start >= text_.size() || !(std::isdigit(static_cast<unsigned char>(text_[start])) || text_[start] == '.'))
            return std::nullopt;
        double v = 0;
        const char* first = text_.data() + pos_;
        if (*first == '+') ++first;
        auto [ptr, ec] = std::from_chars(first, text_.data() + text_.size(), v);
        if (ec != std::errc()) fail("malformed number");
        pos_ = static_cast<std::size_t>(ptr - text_.data());
        return v;
    }

    double number() {
        auto v = try_number();
        if (!v) fail("expected number");
        return *v;
    }

    std::optional<std::size_t> try_variable() {
        skip_ws();
        if (pos_ + 1 < text_.size() && text_[pos_] == 'x' && std::isdigit(static_cast<unsigned char>(text_[pos_ + 1]))) {
            std::size_t at = pos_;
            ++pos_;
            std::size_t idx = integer();
            if (idx >= dim_) {
                pos_ = at;
                fail("unknown variable x" + std::to_string(idx) + " (state dimension " + std::to_string(dim_) + ")");
            }
            return idx;
        }
        return std::nullopt;
    }

    std::size_t variable() {
        auto v = try_variable();
        if (!v) fail("expected variable x<k>");
        return *v;
    }

    Cmp comparison() {
        char c = peek();
        if (c != '<' && c != '>') fail("expected comparison operator");
        ++pos_;
        bool eq = pos_ < text_.size() && text_[pos_] == '=';
        if (eq) ++pos_;
        if (c == '<') return eq ? Cmp::le : Cmp::lt;
        return eq ? Cmp::ge : Cmp::gt;
    }

    struct Linear {
        std::vector<std::pair<std::size_t, double>> terms;
        double offset = 0.0;
    };

    void term(Linear& acc, double sign) {
        if (auto v = try_variable()) {
            acc.terms.emplace_back(*v, sign);
            return;
        }
        double c = number();
        if (accept('*')) {
            acc.terms.emplace_back(variable(), sign * c);
        } else {
            acc.offset += sign * c;
        }
    }

    Linear linear() {
        Linear acc;
        double sign = accept('-') ? -1.0 : 1.0;
        term(acc, sign);
        for (;;) {
            if (accept('+'))
                term(acc, 1.0);
            else if (accept('-'))
                term(acc, -1.0);
            else
                break;
        }
        return acc;
    }

    std::vector<std::size_t> variable_list() {
        std::vector<std::size_t> out{variable()};
        while (accept(',')) out.push_back(variable());
        return out;
    }

    Predicate predicate() {
        if (accept_word("linf")) {
            expect('(');
            auto idx = variable_list();
            expect(';');
            std::vector<double> center{number()};
            while (accept(',')) center.push_back(number());
            expect(')');
            if (center.size() != idx.size()) fail("linf: center has " + std::to_string(center.size()) +
                                                  " coordinates, expected " + std::to_string(idx.size()));
            Cmp c = comparison();
            double r = number();
            if (c == Cmp::lt || c == Cmp::le) return Predicate::inf_ball(std::move(idx), std::move(center), r);
            return Predicate::inf_ball_outside(std::move(idx), std::move(center), r);
        }
        if (accept_word("dist")) {
            expect('(');
            auto a = variable_list();
            expect(';');
            auto b = variable_list();
            expect(')');
            if (a.size() != b.size()) fail("dist: index lists differ in length");
            Cmp c = comparison();
            if (c == Cmp::lt || c == Cmp::le) fail("dist predicates must use '>' or '>='");
            return Predicate::distance(std::move(a), std::move(b), number());
        }
        if (peek() == '\0') fail("unexpected end of input");
        Linear lhs = linear();
        Cmp c = comparison();
        Linear rhs = linear();
        // g = lhs - rhs for '>' ; g = rhs - lhs for '<'
        double s = (c == Cmp::gt || c == Cmp::ge) ? 1.0 : -1.0;
        std::vector<std::pair<std::size_t, double>> terms;
        for (auto [i, w] : lhs.terms) terms.emplace_back(i, s * w);
        for (auto [i, w] : rhs.terms) terms.emplace_back(i, -s * w);
        return Predicate::affine(std::move(terms), s * (lhs.offset - rhs.offset));
    }
};

}  // namespace

Formula parse_formula(std::string_view text, std::size_t state_dim) {
    return Parser(text, state_dim).parse();
}

}  // namespace qpm::stl
