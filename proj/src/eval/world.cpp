#include <set>

#include "lesinr/eval.hpp"

namespace lesinr::eval {

data::ObservationSplit split_world(const data::SyntheticWorld& world, std::uint64_t seed) {
  const auto ids = world.held_out_ids();
  return data::split_observations(world.observations,
                                  {.seed = seed, .held_out = std::set<std::uint32_t>(ids.begin(), ids.end())});
}

std::vector<EvalTask> world_tasks(const data::SyntheticWorld& world, const data::ObservationSplit& split, bool seen,
                                  std::vector<std::string>* notes) {
  if (seen) return make_tasks(world.train_ids(), world.truth, &world.embeddings, {}, notes);
  return make_tasks(world.held_out_ids(), world.truth, &world.embeddings, split.held_out, notes);
}

template <typename T>
std::map<std::uint32_t, double> grounding_overlaps(const model::Model<T>& model, const data::SyntheticWorld& world) {
  const auto grid = feature_grid(model, world.climate.grid());
  std::map<std::uint32_t, double> out;
  for (const auto& rec : world.concepts.records()) {
    const auto raster = ground_text_raster(model, grid, rec.vector);
    std::vector<double> field(raster.size());
    for (std::size_t i = 0; i < field.size(); ++i) field[i] = data::standardized_climate(world.climate, rec.species_id, i);
    out[rec.species_id] = top_decile_overlap(raster.values, field);
  }
  return out;
}

template std::map<std::uint32_t, double> grounding_overlaps(const model::Model<float>&, const data::SyntheticWorld&);
template std::map<std::uint32_t, double> grounding_overlaps(const model::Model<double>&, const data::SyntheticWorld&);

}  // namespace lesinr::eval
