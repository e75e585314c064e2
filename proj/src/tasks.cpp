#include "difftune/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace difftune {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kObjectCircleRadius = 1.5;
constexpr double kStyleCircleRadius = 1.0;
constexpr double kPromptCircleRadius = 0.8;
}  // namespace

Tensor Context::embedding(int n_objects, int n_styles, int n_prompts) const {
  switch (kind) {
    case TaskKind::composition: {
      Tensor e({static_cast<std::size_t>(2 * n_objects + kNumRelations)});
      e.data[object_a] = 1.0;
      e.data[n_objects + object_b] = 1.0;
      e.data[2 * n_objects + relation] = 1.0;
      return e;
    }
    case TaskKind::portrait: {
      Tensor e({static_cast<std::size_t>(n_styles)});
      e.data[style] = 1.0;
      return e;
    }
    case TaskKind::preference: {
      Tensor e({static_cast<std::size_t>(n_prompts)});
      e.data[prompt] = 1.0;
      return e;
    }
  }
  throw ContractError("Context::embedding: unknown kind");
}

std::uint64_t Context::key() const {
  std::uint64_t k = static_cast<std::uint64_t>(kind) + 1;
  for (int field : {object_a, object_b, relation, style, prompt})
    k = k * 1000003ull + static_cast<std::uint64_t>(field + 2);
  return k;
}

TaskUniverse TaskUniverse::make_default(int n_objects, int n_styles,
                                        int n_prompts) {
  TaskUniverse u;
  u.n_styles = n_styles;
  u.n_prompts = n_prompts;
  u.objects.reserve(n_objects);
  for (int i = 0; i < n_objects; ++i) {
    const double a = 2.0 * kPi * i / n_objects;
    u.objects.push_back(ObjectClass{i, kObjectCircleRadius * std::cos(a),
                                    kObjectCircleRadius * std::sin(a), 0.3});
  }
  return u;
}

std::size_t TaskUniverse::context_dim() const {
  return 2 * objects.size() + kNumRelations + n_styles + n_prompts;
}

Tensor TaskUniverse::embed(const Context& c) const {
  Tensor e({context_dim()}, 0.0);
  const int n_obj = static_cast<int>(objects.size());
  std::size_t off = 0;
  const Tensor seg = c.embedding(n_obj, n_styles, n_prompts);
  switch (c.kind) {
    case TaskKind::composition:
      off = 0;
      break;
    case TaskKind::portrait:
      off = 2 * n_obj + kNumRelations;
      break;
    case TaskKind::preference:
      off = 2 * n_obj + kNumRelations + n_styles;
      break;
  }
  for (std::size_t i = 0; i < seg.size(); ++i) e.data[off + i] = seg.data[i];
  return e;
}

Tensor TaskUniverse::composition_mean(int a, int b) const {
  Tensor m({sample_dim()}, 0.0);
  m.data[0] = objects.at(a).cx;
  m.data[1] = objects.at(a).cy;
  m.data[2] = objects.at(b).cx;
  m.data[3] = objects.at(b).cy;
  return m;
}

Tensor TaskUniverse::portrait_mean(int style, int attr_bin) const {
  Tensor m({sample_dim()}, 0.0);
  m.data[0] = attr.centers.at(attr_bin);
  m.data[1] = 0.0;
  const double a = 2.0 * kPi * style / n_styles;
  m.data[2] = kStyleCircleRadius * std::cos(a);
  m.data[3] = kStyleCircleRadius * std::sin(a);
  return m;
}

Tensor TaskUniverse::preference_mean(int prompt) const {
  Tensor m({sample_dim()}, 0.0);
  const double a = 2.0 * kPi * prompt / n_prompts;
  m.data[0] = kPromptCircleRadius * std::cos(a);
  m.data[1] = kPromptCircleRadius * std::sin(a);
  m.data[2] = kPromptCircleRadius * std::cos(a + kPi / n_prompts);
  m.data[3] = kPromptCircleRadius * std::sin(a + kPi / n_prompts);
  return m;
}

std::vector<SceneSample> gen_pretrain_dataset(const TaskUniverse& u,
                                              const PretrainSpec& spec,
                                              Rng& rng) {
  if (u.objects.size() < 2) throw ContractError("gen_pretrain_dataset: need >= 2 object classes");
  if (spec.bias_ratio <= 0.0 || spec.bias_ratio >= 1.0)
    throw ContractError("gen_pretrain_dataset: bias ratio must be in (0, 1)");

  std::vector<SceneSample> out;
  out.reserve(spec.n_composition + spec.n_portrait + spec.n_preference);
  const int n_obj = static_cast<int>(u.objects.size());
  const int n_bins = u.attr.n_bins();

  auto jittered = [&](Tensor mean) {
    for (double& x : mean.data) x += spec.jitter * rng.gaussian();
    return mean;
  };

  for (int i = 0; i < spec.n_composition; ++i) {
    SceneSample s;
    s.ctx.kind = TaskKind::composition;
    s.ctx.object_a = static_cast<int>(rng.below(n_obj));
    do {
      s.ctx.object_b = static_cast<int>(rng.below(n_obj));
    } while (s.ctx.object_b == s.ctx.object_a);
    s.ctx.relation = static_cast<int>(rng.below(kNumRelations));
    s.x0 = jittered(u.composition_mean(s.ctx.object_a, s.ctx.object_b));
    out.push_back(std::move(s));
  }

  for (int i = 0; i < spec.n_portrait; ++i) {
    SceneSample s;
    s.ctx.kind = TaskKind::portrait;
    s.ctx.style = static_cast<int>(rng.below(u.n_styles));
    // Biased attribute marginal: bin 0 with probability rho, the rest uniform.
    if (rng.uniform() < spec.bias_ratio) {
      s.attr_bin = 0;
    } else {
      s.attr_bin = 1 + static_cast<int>(rng.below(n_bins - 1));
    }
    s.x0 = jittered(u.portrait_mean(s.ctx.style, s.attr_bin));
    out.push_back(std::move(s));
  }

  for (int i = 0; i < spec.n_preference; ++i) {
    SceneSample s;
    s.ctx.kind = TaskKind::preference;
    s.ctx.prompt = static_cast<int>(rng.below(u.n_prompts));
    s.x0 = jittered(u.preference_mean(s.ctx.prompt));
    out.push_back(std::move(s));
  }
  return out;
}

double detect(const ObjectClass& o, const Tensor& x0) {
  const std::size_t n_slots = x0.size() / 2;
  double best = 0.0;
  for (std::size_t s = 0; s < n_slots; ++s) {
    const double dx = x0.data[2 * s] - o.cx;
    const double dy = x0.data[2 * s + 1] - o.cy;
    const double conf =
        std::exp(-(dx * dx + dy * dy) / (2.0 * o.width * o.width));
    best = std::max(best, conf);
  }
  return best;
}

int classify_attribute(const Tensor& x0, const AttributeSpec& spec) {
  const double coord = x0.data[0];
  int best = 0;
  double best_dist = std::abs(coord - spec.centers[0]);
  for (int i = 1; i < spec.n_bins(); ++i) {
    const double d = std::abs(coord - spec.centers[i]);
    if (d < best_dist) {
      best = i;
      best_dist = d;
    }
  }
  return best;
}

std::pair<std::vector<int>, std::vector<int>> split_objects(
    int n_classes, double train_fraction, Rng& rng) {
  if (n_classes < 2 || train_fraction <= 0.0 || train_fraction >= 1.0)
    throw ContractError("split_objects: need >= 2 classes and fraction in (0, 1)");
  std::vector<int> ids(n_classes);
  std::iota(ids.begin(), ids.end(), 0);
  // Fisher-Yates with our seeded stream.
  for (int i = n_classes - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.below(i + 1));
    std::swap(ids[i], ids[j]);
  }
  int n_seen = static_cast<int>(std::lround(train_fraction * n_classes));
  n_seen = std::clamp(n_seen, 1, n_classes - 1);
  std::vector<int> seen(ids.begin(), ids.begin() + n_seen);
  std::vector<int> unseen(ids.begin() + n_seen, ids.end());
  std::sort(seen.begin(), seen.end());
  std::sort(unseen.begin(), unseen.end());
  return {std::move(seen), std::move(unseen)};
}

Context make_prompt(const TaskSpec& spec, Rng& rng) {
  Context c;
  c.kind = spec.kind;
  switch (spec.kind) {
    case TaskKind::composition: {
      if (spec.object_pool.size() < 2)
        throw ContractError("make_prompt: composition needs >= 2 objects");
      const std::size_t n = spec.object_pool.size();
      c.object_a = spec.object_pool[rng.below(n)];
      do {
        c.object_b = spec.object_pool[rng.below(n)];
      } while (c.object_b == c.object_a);
      c.relation = static_cast<int>(rng.below(kNumRelations));
      break;
    }
    case TaskKind::portrait:
      if (spec.style_pool.empty())
        throw ContractError("make_prompt: empty style pool");
      c.style = spec.style_pool[rng.below(spec.style_pool.size())];
      break;
    case TaskKind::preference:
      if (spec.prompt_pool.empty())
        throw ContractError("make_prompt: empty prompt pool");
      c.prompt = spec.prompt_pool[rng.below(spec.prompt_pool.size())];
      break;
  }
  return c;
}

}  // namespace difftune
