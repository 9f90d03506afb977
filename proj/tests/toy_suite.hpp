#pragma once

// Seeded family of small synthesis problems. Each seed perturbs the
// coefficients of five base systems; the problems are written in the
// problem-file format so the parser is exercised as well.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sosclbf/io.hpp"
#include "sosclbf/poly_io.hpp"

namespace sosclbf::testing {

struct ToyProblem {
  std::string name;
  std::string text;
};

inline std::vector<ToyProblem> toy_suite(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto draw = [&](double lo, double hi) {
    return format_double(lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng));
  };
  const std::string a = draw(0.5, 2.0);
  const std::string b = draw(0.2, 1.0);
  const std::string c = draw(0.5, 2.0);
  const std::string d = draw(0.0, 0.5);
  const std::string e = draw(0.0, 0.5);

  std::vector<ToyProblem> out;
  out.push_back({"cubic feedback", R"(sosclbf-problem 1
[variables]
states = x1
inputs = 1
[dynamics]
f[1] = 0
G[1,1] = 1
[sets]
w[1] = x1^2 - 1
r = x1^2 - 2
[centers]
x[1] = 0
value[1] = -1
[degrees]
V = 2
B = 2
B_set = 0 2
s1 = 0
s2 = 2
s3 = 2
s4 = 0
p = 3
pm1 = 2
[algorithm]
max_outer = 6
[initial_controller]
s1 = 1
p[1] = -)" + a + R"(*x1^3
pm1[1] = 2*x1^2
)"});

  out.push_back({"unstable scalar", R"(sosclbf-problem 1
[variables]
states = x1
inputs = 1
[dynamics]
f[1] = )" + b + R"(*x1
G[1,1] = 1
[sets]
w[1] = x1^2 - 1
r = x1^2 - 2
[centers]
x[1] = 0
value[1] = -1
[degrees]
V = 2
B = 2
B_set = 0 2
s1 = 0
s2 = 2
s3 = 2
s4 = 0
p = 3
pm1 = 0
[algorithm]
max_outer = 6
[initial_controller]
p[1] = -()" + b + R"( + 1)*x1
)"});

  out.push_back({"double integrator", R"(sosclbf-problem 1
[variables]
states = x1 x2
inputs = 1
[dynamics]
f[1] = x2
f[2] = 0
G[2,1] = )" + c + R"(
[sets]
w[1] = x1^2 + x2^2 - 1
r = x1^2 + x2^2 - 2
[centers]
x[1] = 0 0
value[1] = -1
[degrees]
V = 2
B = 2
s1 = 0
s2 = 2
s3 = 2
s4 = 0
p = 1
pm1 = 0
[algorithm]
max_outer = 6
[initial_controller]
p[1] = -(x1 + 2*x2)/)" + c + R"(
)"});

  out.push_back({"quadratic drift, two barriers", R"(sosclbf-problem 1
[variables]
states = x1 x2
inputs = 1
[dynamics]
f[1] = -x1 + x2
f[2] = )" + d + R"(*x1^2
G[2,1] = 1
[sets]
w[1] = x1^2 + x2^2 - 1
w[2] = (x1 - 0.3)^2 + x2^2 - 1
r = x1^2 + x2^2 - 3
[centers]
x[1] = 0 0
value[1] = -1
x[2] = 0 0
value[2] = -1
[degrees]
V = 2
B = 2
s1 = 0
s2 = 2
s3 = 2
s4 = 0
p = 2
pm1 = 0
[algorithm]
max_outer = 6
[initial_controller]
p[1] = -x1 - 2*x2 - )" + d + R"(*x1^2
)"});

  out.push_back({"two inputs", R"(sosclbf-problem 1
[variables]
states = x1 x2
inputs = 2
[dynamics]
f[1] = x2
f[2] = -x1 + )" + e + R"(*x2 - )" + e + R"(*x1^2*x2
G[1,1] = 1
G[2,2] = 1
[sets]
w[1] = x1^2 + x2^2 - 1
r = x1^2 + x2^2 - 2
[centers]
x[1] = 0 0
value[1] = -1
[degrees]
V = 2
B = 2
s1 = 0
s2 = 2
s3 = 2
s4 = 0
p = 3
pm1 = 0
[algorithm]
max_outer = 6
[initial_controller]
p[1] = -x1
p[2] = -(1 + )" + e + R"()*x2
)"});
  return out;
}

}  // namespace sosclbf::testing
