#include "bdlab/poison.hpp"

#include <algorithm>
#include <cmath>

#include "bdlab/errors.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {

int policy_target(const LabelPolicy& p) {
  return std::visit([](const auto& v) { return v.target; }, p);
}

void PoisonSpec::validate(int num_classes) const {
  trigger.validate();
  if (!(pp > 0.0 && pp < 1.0)) throw ConfigError("pp must be strictly between 0 and 1, got " + std::to_string(pp));
  auto in_range = [&](int c) { return c >= 0 && c < num_classes; };
  if (const auto* o = std::get_if<OneToOne>(&policy)) {
    if (!in_range(o->source) || !in_range(o->target))
      throw ConfigError("one-to-one classes out of range for " + std::to_string(num_classes) + " classes");
    if (o->source == o->target) throw ConfigError("one-to-one source and target must differ");
  } else if (!in_range(std::get<AllToOne>(policy).target)) {
    throw ConfigError("all-to-one target out of range");
  }
}

namespace {

std::vector<int> eligible_classes(const LabelPolicy& policy, int num_classes, bool include_target) {
  if (const auto* o = std::get_if<OneToOne>(&policy)) return {o->source};
  const int target = std::get<AllToOne>(policy).target;
  std::vector<int> out;
  for (int c = 0; c < num_classes; ++c)
    if (c != target || include_target) out.push_back(c);
  return out;
}

}  // namespace

PoisonResult poison_dataset(const LabeledDataset& ds, const PoisonSpec& spec, std::uint64_t seed) {
  spec.validate(ds.num_classes);
  if (spec.trigger.needs_faces() && !ds.face_backed())
    throw ConfigError("trigger '" + spec.trigger.name + "' needs a face-backed dataset");
  const int target = policy_target(spec.policy);

  PoisonResult res{ds, {}};
  for (int c : eligible_classes(spec.policy, ds.num_classes, false)) {
    // Only genuine members of the class are candidates.
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.labels[i] == c && !ds.poisoned[i]) idx.push_back(i);
    if (idx.empty()) continue;
    const auto count = static_cast<std::size_t>(std::ceil(spec.pp * static_cast<double>(idx.size()) - 1e-9));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    rng.shuffle(idx.begin(), idx.end());
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t i = idx[k];
      res.dataset.images[i] = apply_trigger(ds, i, spec.trigger);
      if (res.dataset.face_backed() && spec.trigger.needs_faces()) {
        const auto& e = std::get<ExpressionShift>(spec.trigger.kind);
        auto& p = res.dataset.faces[i].params;
        p.set(e.which, p.get(e.which) + e.delta);
      }
      res.dataset.labels[i] = target;
      res.dataset.poisoned[i] = true;
      res.poisoned_indices.push_back(i);
    }
  }
  if (res.poisoned_indices.empty())
    throw ConfigError("poisoning selects zero samples (pp=" + std::to_string(spec.pp) + ", no eligible images)");
  std::sort(res.poisoned_indices.begin(), res.poisoned_indices.end());
  return res;
}

LabeledDataset build_malicious_testset(const LabeledDataset& test, const PoisonSpec& spec,
                                       const MaliciousTestOptions& opts) {
  spec.validate(test.num_classes);
  const int target = policy_target(spec.policy);
  LabeledDataset out;
  out.num_classes = test.num_classes;
  out.split = Split::Test;
  for (int c : eligible_classes(spec.policy, test.num_classes, opts.include_target_class)) {
    std::size_t taken = 0;
    bool any = false;
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (test.true_labels[i] != c || test.poisoned[i]) continue;
      any = true;
      if (opts.per_class && taken == opts.per_class) break;
      out.push_back(apply_trigger(test, i, spec.trigger), target, true, c, test.ids[i]);
      if (test.face_backed()) {
        FaceRecord rec = test.faces[i];
        if (const auto* e = std::get_if<ExpressionShift>(&spec.trigger.kind))
          rec.params.set(e->which, rec.params.get(e->which) + e->delta);
        out.faces.push_back(rec);
      }
      ++taken;
    }
    if (!any && std::holds_alternative<OneToOne>(spec.policy))
      throw ConfigError("no held-out images of source class " + std::to_string(c));
  }
  if (out.size() == 0) throw ConfigError("malicious test set is empty");
  return out;
}

}  // namespace bdlab
