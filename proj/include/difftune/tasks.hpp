#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "difftune/rng.hpp"
#include "difftune/tensor.hpp"

namespace difftune {

inline constexpr int kNumRelations = 5;

enum class TaskKind { composition, portrait, preference };

struct ObjectClass {
  int id = 0;
  double cx = 0.0, cy = 0.0;  // center
  double width = 0.3;         // detector kernel width
};

// A prompt. Payload fields depend on the kind; unused ones stay -1.
struct Context {
  TaskKind kind = TaskKind::preference;
  int object_a = -1, object_b = -1, relation = -1;  // composition
  int style = -1;                                   // portrait
  int prompt = -1;                                  // preference

  // Per-kind one-hot concatenation (composition: two object one-hots plus a
  // relation one-hot).
  Tensor embedding(int n_objects, int n_styles, int n_prompts) const;

  // Stable key for per-prompt reward statistics.
  std::uint64_t key() const;
};

struct AttributeSpec {
  std::vector<double> centers = {-1.5, -0.5, 0.5, 1.5};

  int n_bins() const { return static_cast<int>(centers.size()); }
};

struct SceneSample {
  Context ctx;
  Tensor x0;
  int attr_bin = -1;  // generation-time bin for portrait samples
};

// The synthetic world: object classes on a circle, portrait styles and
// preference prompts on their own circles, one attribute axis.
struct TaskUniverse {
  std::vector<ObjectClass> objects;
  int n_styles = 8;
  int n_prompts = 8;
  AttributeSpec attr;
  int slots = 2;

  static TaskUniverse make_default(int n_objects = 10, int n_styles = 8,
                                   int n_prompts = 8);

  std::size_t sample_dim() const { return 2 * static_cast<std::size_t>(slots); }
  std::size_t context_dim() const;

  // Full-width denoiser embedding: the per-kind one-hot placed in its
  // segment, zeros elsewhere. The all-zero vector is the null context.
  Tensor embed(const Context& c) const;

  // Noise-free data-generating geometry per context kind.
  Tensor composition_mean(int object_a, int object_b) const;
  Tensor portrait_mean(int style, int attr_bin) const;
  Tensor preference_mean(int prompt) const;
};

struct PretrainSpec {
  int n_composition = 2000;
  int n_portrait = 2000;
  int n_preference = 2000;
  double bias_ratio = 0.85;  // portrait bin-0 probability
  double jitter = 0.1;
};

std::vector<SceneSample> gen_pretrain_dataset(const TaskUniverse& u,
                                              const PretrainSpec& spec,
                                              Rng& rng);

// Detector proxy: best slot match against the object's Gaussian kernel.
double detect(const ObjectClass& o, const Tensor& x0);

// Nearest bin center on the attribute coordinate (slot 0, x); ties break
// toward the lower index.
int classify_attribute(const Tensor& x0, const AttributeSpec& spec);

// Seed-deterministic disjoint partition of class ids into (seen, unseen).
std::pair<std::vector<int>, std::vector<int>> split_objects(
    int n_classes, double train_fraction, Rng& rng);

// Prompt distribution for one task: pools restrict which ids may be drawn.
struct TaskSpec {
  TaskKind kind = TaskKind::preference;
  std::vector<int> object_pool;  // composition
  std::vector<int> style_pool;   // portrait
  std::vector<int> prompt_pool;  // preference
};

Context make_prompt(const TaskSpec& spec, Rng& rng);

}  // namespace difftune
