#include "bdlab/synthetic_faces.hpp"

#include "bdlab/errors.hpp"
#include "bdlab/rng.hpp"

namespace bdlab {

LabeledDataset make_identity_dataset(int num_classes, std::size_t per_class, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("identity dataset needs at least 2 classes");
  if (per_class < 4)
    throw ConfigError("identity dataset needs at least 4 images per class to split train/test, got " +
                      std::to_string(per_class));
  LabeledDataset ds;
  ds.num_classes = num_classes;
  for (int c = 0; c < num_classes; ++c) {
    FaceParams params;
    params.identity = random_identity(derive_seed(seed, static_cast<std::uint64_t>(c)));
    for (std::size_t i = 0; i < per_class; ++i) {
      const auto jitter = derive_seed(seed, (static_cast<std::uint64_t>(c) << 32) | (i + 1));
      ds.push_back(render_face(params, jitter), c);
      ds.faces.push_back({params, jitter});
    }
  }
  return ds;
}

}  // namespace bdlab
