#include "lesion/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <functional>
#include <map>
#include <numeric>

#include "lesion/error.hpp"
#include "lesion/grad_check.hpp"
#include "lesion/models.hpp"
#include "lesion/ops.hpp"
#include "lesion/rng.hpp"

namespace lesion {

namespace {

std::size_t dim(Rng& rng, std::size_t lo = 1) { return lo + rng.below(4 - lo + 1); }

Tensor values(Shape shape, Rng& rng) { return Tensor::uniform(std::move(shape), -2.0, 2.0, rng); }

// Evenly spaced values in [-2,2] in shuffled order, jittered by less than a
// quarter step: every pair differs by at least half a step and no value sits
// within 1e-3 of zero.
Tensor distinct_values(Shape shape, Rng& rng) {
  const std::size_t n = numel(shape);
  const double step = 4.0 / static_cast<double>(n + 1);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = -2.0 + step * static_cast<double>(i + 1) + rng.uniform(-0.25, 0.25) * step;
    if (std::abs(x) < 1e-3) x += 0.1 * step;
    v[i] = x;
  }
  rng.shuffle(std::span<double>(v));
  return Tensor(std::move(shape), std::move(v));
}

Shape broadcast_partner(const Shape& s, Rng& rng) {
  Shape out(s.begin() + static_cast<std::ptrdiff_t>(rng.below(s.size())), s.end());
  for (std::size_t& d : out) {
    if (rng.bernoulli(0.3)) d = 1;
  }
  return out;
}

Shape random_shape(Rng& rng, std::size_t min_rank = 1) {
  Shape s(min_rank + rng.below(3 - min_rank + 1));
  for (std::size_t& d : s) d = dim(rng);
  return s;
}

struct Case {
  std::vector<Tensor> leaves;
  std::function<Tensor(std::span<Tensor>)> op;
};

using CaseMaker = std::function<Case(Rng&)>;

const std::map<std::string, CaseMaker>& cases() {
  static const std::map<std::string, CaseMaker> table{
      {"add", [](Rng& r) {
         Shape s = random_shape(r);
         return Case{{values(s, r), values(broadcast_partner(s, r), r)}, [](std::span<Tensor> t) { return add(t[0], t[1]); }};
       }},
      {"sub", [](Rng& r) {
         Shape s = random_shape(r);
         return Case{{values(broadcast_partner(s, r), r), values(s, r)}, [](std::span<Tensor> t) { return sub(t[0], t[1]); }};
       }},
      {"mul", [](Rng& r) {
         Shape s = random_shape(r);
         return Case{{values(s, r), values(broadcast_partner(s, r), r)}, [](std::span<Tensor> t) { return mul(t[0], t[1]); }};
       }},
      {"scale", [](Rng& r) {
         const double f = r.uniform(-2.0, 2.0);
         return Case{{values(random_shape(r), r)}, [f](std::span<Tensor> t) { return scale(t[0], f); }};
       }},
      {"matmul", [](Rng& r) {
         const std::size_t b = dim(r), m = dim(r), k = dim(r), n = dim(r);
         Shape lhs = r.bernoulli(0.5) ? Shape{b, m, k} : Shape{m, k};
         Shape rhs = r.bernoulli(0.5) ? Shape{b, k, n} : Shape{k, n};
         return Case{{values(lhs, r), values(rhs, r)}, [](std::span<Tensor> t) { return matmul(t[0], t[1]); }};
       }},
      {"linear", [](Rng& r) {
         const std::size_t m = dim(r), din = dim(r), dout = dim(r);
         Shape x = r.bernoulli(0.5) ? Shape{m, din} : Shape{din};
         return Case{{values(x, r), values({din, dout}, r), values({dout}, r)},
                     [](std::span<Tensor> t) { return linear(t[0], t[1], t[2]); }};
       }},
      {"reshape", [](Rng& r) {
         const std::size_t a = dim(r), b = dim(r), c = dim(r);
         return Case{{values({a, b, c}, r)}, [=](std::span<Tensor> t) { return reshape(t[0], {c, a * b}); }};
       }},
      {"permute", [](Rng& r) {
         std::vector<std::size_t> axes{0, 1, 2};
         r.shuffle(std::span<std::size_t>(axes));
         return Case{{values({dim(r), dim(r), dim(r)}, r)}, [axes](std::span<Tensor> t) { return permute(t[0], axes); }};
       }},
      {"transpose", [](Rng& r) {
         return Case{{values(random_shape(r, 2), r)}, [](std::span<Tensor> t) { return transpose(t[0]); }};
       }},
      {"concat", [](Rng& r) {
         Shape a = random_shape(r);
         const std::size_t axis = r.below(a.size());
         Shape b = a;
         b[axis] = dim(r);
         return Case{{values(a, r), values(b, r)}, [axis](std::span<Tensor> t) { return concat({t[0], t[1]}, axis); }};
       }},
      {"stack", [](Rng& r) {
         Shape s = random_shape(r, 1);
         if (s.size() > 2) s.pop_back();
         return Case{{values(s, r), values(s, r), values(s, r)}, [](std::span<Tensor> t) { return stack({t[0], t[1], t[2]}); }};
       }},
      {"gather", [](Rng& r) {
         Shape s = random_shape(r);
         const std::size_t n = numel(s), out = dim(r) * dim(r);
         std::vector<std::size_t> index(out);
         for (std::size_t& i : index) i = r.below(n);
         return Case{{values(s, r)}, [index, out](std::span<Tensor> t) { return gather(t[0], index, {out}); }};
       }},
      {"sum", [](Rng& r) { return Case{{values(random_shape(r), r)}, [](std::span<Tensor> t) { return sum(t[0]); }}; }},
      {"sum_axis", [](Rng& r) {
         Shape s = random_shape(r);
         const std::size_t axis = r.below(s.size());
         return Case{{values(s, r)}, [axis](std::span<Tensor> t) { return sum(t[0], axis); }};
       }},
      {"mean_axis", [](Rng& r) {
         Shape s = random_shape(r);
         const std::size_t axis = r.below(s.size());
         return Case{{values(s, r)}, [axis](std::span<Tensor> t) { return mean(t[0], axis); }};
       }},
      {"conv2d", [](Rng& r) {
         const std::size_t c = dim(r), h = dim(r), w = dim(r), co = dim(r);
         const std::size_t k = r.bernoulli(0.5) ? 3 : 1;
         const std::size_t pad = k / 2;
         const std::size_t stride = ((h + 2 * pad - k) % 2 == 0 && (w + 2 * pad - k) % 2 == 0 && r.bernoulli(0.5)) ? 2 : 1;
         return Case{{values({c, h, w}, r), values({co, c, k, k}, r), values({co}, r)},
                     [=](std::span<Tensor> t) { return conv2d(t[0], t[1], t[2], pad, stride); }};
       }},
      {"conv1d", [](Rng& r) {
         const std::size_t k = r.bernoulli(0.5) ? 3 : 1;
         return Case{{values({dim(r)}, r), values({k}, r)}, [](std::span<Tensor> t) { return conv1d(t[0], t[1]); }};
       }},
      {"global_avg_pool", [](Rng& r) {
         return Case{{values({dim(r), dim(r), dim(r)}, r)}, [](std::span<Tensor> t) { return global_pool(t[0], PoolMode::Avg); }};
       }},
      {"global_max_pool", [](Rng& r) {
         return Case{{distinct_values({dim(r), dim(r), dim(r)}, r)}, [](std::span<Tensor> t) { return global_pool(t[0], PoolMode::Max); }};
       }},
      {"channel_avg_pool", [](Rng& r) {
         return Case{{values({dim(r), dim(r), dim(r)}, r)}, [](std::span<Tensor> t) { return channel_pool(t[0], PoolMode::Avg); }};
       }},
      {"channel_max_pool", [](Rng& r) {
         return Case{{distinct_values({dim(r), dim(r), dim(r)}, r)}, [](std::span<Tensor> t) { return channel_pool(t[0], PoolMode::Max); }};
       }},
      {"avg_pool2", [](Rng& r) {
         return Case{{values({dim(r), dim(r, 2), dim(r, 2)}, r)}, [](std::span<Tensor> t) { return avg_pool2(t[0]); }};
       }},
      {"sigmoid", [](Rng& r) { return Case{{values(random_shape(r), r)}, [](std::span<Tensor> t) { return sigmoid(t[0]); }}; }},
      {"relu", [](Rng& r) { return Case{{distinct_values(random_shape(r), r)}, [](std::span<Tensor> t) { return relu(t[0]); }}; }},
      {"gelu", [](Rng& r) { return Case{{values(random_shape(r), r)}, [](std::span<Tensor> t) { return gelu(t[0]); }}; }},
      {"softmax", [](Rng& r) {
         Shape s = random_shape(r);
         const std::size_t axis = r.below(s.size());
         return Case{{values(s, r)}, [axis](std::span<Tensor> t) { return softmax(t[0], axis); }};
       }},
      {"layer_norm", [](Rng& r) {
         Shape s = random_shape(r);
         s.back() = dim(r, 2);
         const std::size_t d = s.back();
         return Case{{values(s, r), values({d}, r), values({d}, r)},
                     [](std::span<Tensor> t) { return layer_norm(t[0], t[1], t[2]); }};
       }},
      {"dropout", [](Rng& r) {
         const std::uint64_t mask_seed = r.next_u64();
         return Case{{values(random_shape(r), r)}, [mask_seed](std::span<Tensor> t) {
                       Rng mask(mask_seed);
                       return dropout(t[0], 0.3, mask, true);
                     }};
       }},
      {"cross_entropy", [](Rng& r) {
         const std::size_t n = dim(r), k = dim(r, 2);
         std::vector<int> labels(n);
         for (int& l : labels) l = static_cast<int>(r.below(k));
         return Case{{values({n, k}, r)}, [labels](std::span<Tensor> t) { return cross_entropy(t[0], labels); }};
       }},
  };
  return table;
}

void record(CheckOutcome& out, const GradCheckResult& r, const std::string& where) {
  if (r.max_relative_error >= out.max_relative_error) {
    out.max_relative_error = r.max_relative_error;
    out.worst = where;
  }
}

nlohmann::json tiny_config(const std::string& variant) {
  nlohmann::json cfg = default_model_config(variant, 8, 3);
  if (variant.starts_with("vit")) {
    cfg["patch_size"] = 4;
    cfg["embed_dim"] = 8;
    cfg["depth"] = 1;
    cfg["num_heads"] = 2;
    cfg["mlp_hidden"] = 16;
  } else {
    cfg["widths"] = {4, 8};
    cfg["stage_attention"] = std::vector<std::string>(2, cfg["stage_attention"][0].get<std::string>());
  }
  return cfg;
}

}  // namespace

const std::vector<std::string>& gradcheck_op_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, maker] : cases()) out.push_back(name);
    return out;
  }();
  return names;
}

CheckOutcome check_op(const std::string& op, std::uint64_t seed, std::size_t draws) {
  auto it = cases().find(op);
  if (it == cases().end()) fail(ErrorKind::InvalidConfig, "no gradient check for op '" + op + "'");
  CheckOutcome out{op, 0.0, kOpTolerance, draws, ""};
  const auto op_index = static_cast<std::uint64_t>(std::distance(cases().begin(), it));
  for (std::size_t d = 0; d < draws; ++d) {
    Rng rng = Rng::derive(seed, {op_index, d});
    Case c = it->second(rng);
    Tensor probe = c.op(c.leaves);
    Tensor weights = Tensor::uniform(probe.shape(), -1.0, 1.0, rng);
    auto r = grad_check([&] { return sum(mul(c.op(c.leaves), weights)); }, c.leaves);
    record(out, r, "draw " + std::to_string(d) + " input " + std::to_string(r.worst_tensor) + "[" + std::to_string(r.worst_index) + "]");
  }
  return out;
}

std::vector<CheckOutcome> check_all_ops(std::uint64_t seed, std::size_t draws) {
  std::vector<CheckOutcome> out;
  for (const std::string& name : gradcheck_op_names()) out.push_back(check_op(name, seed, draws));
  return out;
}

CheckOutcome check_model(const std::string& variant, std::uint64_t seed, std::size_t draws) {
  const nlohmann::json cfg = tiny_config(variant);
  CheckOutcome out{variant, 0.0, kModelTolerance, draws, ""};
  const double eps = 1e-5;
  std::size_t accepted = 0;
  for (std::uint64_t attempt = 0; accepted < draws; ++attempt) {
    if (attempt >= 10 * draws) fail(ErrorKind::InvalidConfig, "no resolvable parameter draw for " + variant);
    Rng rng = Rng::derive(seed, {0x6d6f64656cULL, attempt});
    auto model = make_model(cfg, rng);
    ParameterList params = model->parameters();
    std::vector<Tensor> leaves;
    for (const auto& p : params) {
      // Zero-initialized biases and shifts would park relu inputs exactly on the kink.
      Tensor t = p.tensor;
      auto v = t.mutable_data();
      if (std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; })) {
        for (double& x : v) x = rng.uniform(-0.1, 0.1);
      }
      leaves.push_back(t);
    }
    Tensor image = Tensor::uniform({3, 8, 8}, 0.0, 1.0, rng);
    const std::vector<int> label{static_cast<int>(rng.below(3))};
    Rng forward_rng(0);
    auto loss = [&] { return cross_entropy(reshape(model->forward(image, forward_rng, false), {1, 3}), label); };

    // Central differences resolve a component only down to about one ulp of
    // the loss over 2*eps; draws with a smaller nonzero component are redrawn.
    double f = 0.0;
    {
      for (Tensor& t : leaves) t.zero_grad();
      Tensor l = loss();
      f = l.item();
      l.backward();
    }
    const double floor = std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(f)) / (eps * kModelTolerance);
    bool resolvable = true;
    for (const Tensor& t : leaves) {
      if (!t.has_grad()) continue;
      for (double g : t.grad()) resolvable = resolvable && (g == 0.0 || std::abs(g) >= floor);
    }
    if (!resolvable) {
      ++out.redraws;
      continue;
    }
    auto r = grad_check(loss, leaves, eps);
    record(out, r, "draw " + std::to_string(accepted) + " " + params[r.worst_tensor].name + "[" + std::to_string(r.worst_index) + "]");
    ++accepted;
  }
  return out;
}

}  // namespace lesion
