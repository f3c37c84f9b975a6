#pragma once

// Bivariate polynomials in (x, y) with a small expression parser.
// Used for config-supplied densities, boundary data and defining functions.

#include <Eigen/Core>

#include <cctype>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <utility>

#include "abreu/error.hpp"

namespace abreu {

class Polynomial {
public:
  using Exponent = std::pair<int, int>;

  Polynomial() = default;
  explicit Polynomial(double c) {
    if (c != 0.0) terms_[{0, 0}] = c;
  }

  static Polynomial x() { return monomial(1, 0, 1.0); }
  static Polynomial y() { return monomial(0, 1, 1.0); }
  static Polynomial monomial(int i, int j, double c) {
    Polynomial p;
    if (c != 0.0) p.terms_[{i, j}] = c;
    return p;
  }

  /// Parses expressions such as "0.5*(x^2 + y^2) - 1" or "1 + 0.2*x*y".
  static Polynomial parse(std::string_view text);

  const std::map<Exponent, double>& terms() const { return terms_; }
  int degree() const {
    int d = 0;
    for (const auto& [e, c] : terms_) d = std::max(d, e.first + e.second);
    return d;
  }

  double operator()(const Eigen::Vector2d& p) const {
    double s = 0.0;
    for (const auto& [e, c] : terms_) s += c * ipow(p.x(), e.first) * ipow(p.y(), e.second);
    return s;
  }

  Polynomial dx() const {
    Polynomial r;
    for (const auto& [e, c] : terms_)
      if (e.first > 0) r.add({e.first - 1, e.second}, c * e.first);
    return r;
  }
  Polynomial dy() const {
    Polynomial r;
    for (const auto& [e, c] : terms_)
      if (e.second > 0) r.add({e.first, e.second - 1}, c * e.second);
    return r;
  }

  Eigen::Vector2d gradient(const Eigen::Vector2d& p) const { return {dx()(p), dy()(p)}; }
  Eigen::Matrix2d hessian(const Eigen::Vector2d& p) const {
    const Polynomial px = dx(), py = dy();
    const double xy = px.dy()(p);
    Eigen::Matrix2d h;
    h << px.dx()(p), xy, xy, py.dy()(p);
    return h;
  }

  friend Polynomial operator+(Polynomial a, const Polynomial& b) {
    for (const auto& [e, c] : b.terms_) a.add(e, c);
    return a;
  }
  friend Polynomial operator-(Polynomial a, const Polynomial& b) {
    for (const auto& [e, c] : b.terms_) a.add(e, -c);
    return a;
  }
  friend Polynomial operator*(const Polynomial& a, const Polynomial& b) {
    Polynomial r;
    for (const auto& [ea, ca] : a.terms_)
      for (const auto& [eb, cb] : b.terms_) r.add({ea.first + eb.first, ea.second + eb.second}, ca * cb);
    return r;
  }
  Polynomial pow(int n) const {
    Polynomial r(1.0);
    for (int k = 0; k < n; ++k) r = r * *this;
    return r;
  }

private:
  std::map<Exponent, double> terms_;

  void add(const Exponent& e, double c) {
    double& slot = terms_[e];
    slot += c;
    if (slot == 0.0) terms_.erase(e);
  }

  static double ipow(double b, int n) {
    double r = 1.0;
    for (int k = 0; k < n; ++k) r *= b;
    return r;
  }

  class Parser;
};

class Polynomial::Parser {
public:
  explicit Parser(std::string_view s) : s_(s) {}

  Polynomial run() {
    Polynomial p = expr();
    skip();
    if (pos_ != s_.size()) fail("unexpected trailing input");
    return p;
  }

private:
  std::string_view s_;
  std::size_t pos_ = 0;

  [[noreturn]] void fail(const std::string& why) const {
    throw ConfigError("polynomial expression '" + std::string(s_) + "': " + why + " at offset " +
                      std::to_string(pos_));
  }
  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  Polynomial expr() {
    Polynomial acc = term();
    for (;;) {
      if (eat('+')) acc = acc + term();
      else if (eat('-')) acc = acc - term();
      else return acc;
    }
  }
  Polynomial term() {
    Polynomial acc = unary();
    for (;;) {
      if (eat('*')) {
        acc = acc * unary();
      } else if (eat('/')) {
        skip();
        const double d = number();
        if (d == 0.0) fail("division by zero");
        acc = acc * Polynomial(1.0 / d);
      } else {
        return acc;
      }
    }
  }
  Polynomial unary() {
    if (eat('-')) return Polynomial(-1.0) * unary();
    if (eat('+')) return unary();
    return power();
  }
  Polynomial power() {
    Polynomial base = atom();
    if (eat('^')) {
      skip();
      const double e = number();
      if (e < 0 || e != std::floor(e)) fail("exponent must be a non-negative integer");
      return base.pow(static_cast<int>(e));
    }
    return base;
  }
  Polynomial atom() {
    skip();
    if (eat('(')) {
      Polynomial p = expr();
      if (!eat(')')) fail("missing ')'");
      return p;
    }
    if (pos_ >= s_.size()) fail("unexpected end of input");
    const char c = s_[pos_];
    if (c == 'x') {
      ++pos_;
      return Polynomial::x();
    }
    if (c == 'y') {
      ++pos_;
      return Polynomial::y();
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return Polynomial(number());
    fail(std::string("unexpected character '") + c + "'");
  }
  double number() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() &&
           (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.' || s_[pos_] == 'e' ||
            s_[pos_] == 'E' ||
            ((s_[pos_] == '-' || s_[pos_] == '+') && pos_ > start &&
             (s_[pos_ - 1] == 'e' || s_[pos_ - 1] == 'E'))))
      ++pos_;
    if (start == pos_) fail("expected a number");
    const std::string tok(s_.substr(start, pos_ - start));
    try {
      std::size_t used = 0;
      const double v = std::stod(tok, &used);
      if (used != tok.size()) fail("malformed number '" + tok + "'");
      return v;
    } catch (const std::invalid_argument&) {
      fail("malformed number '" + tok + "'");
    }
  }
};

inline Polynomial Polynomial::parse(std::string_view text) { return Parser(text).run(); }

} // namespace abreu
