#pragma once

#include <cstdint>
#include <vector>

#include "raymap/dataset.hpp"
#include "raymap/encoders.hpp"
#include "raymap/spatial_index.hpp"

namespace raymap {

struct ModelConfig {
  EncoderConfig enc;
  int k_ref = 16;    // reference pages per query
  int k_global = 4;  // same-site neighbor targets per query
};

struct RefObs {
  int id = 0;  // position in the source observation list
  Point pos;
  double rss_dbm = 0.0;
  char los = 'N';
};

// Bounded per-site evidence set: a spatially stratified subsample of the
// site's observations, indexed for page selection.
struct ReferenceScaffold {
  int site = 0;
  int budget = 0;
  std::vector<RefObs> refs;
  SpatialIndex index;
};

ReferenceScaffold build_scaffold(int site, const std::vector<RefObs>& obs, int budget,
                                 std::uint64_t seed);
ReferenceScaffold scaffold_from_dataset(const Dataset& ds, int site, int budget,
                                        std::uint64_t seed);

struct QueryPoint {
  Point pos;
  char los = 'N';
};

// One selected reference page: the reference plus its triad geometry.  The
// tb slot is shared verbatim across all pages of a query.
struct LocalPage {
  const RefObs* ref = nullptr;
  PageDescriptor geom;
};

// K_ref nearest scaffold references to the target (all of them when the
// scaffold is smaller), ordered by ascending distance.
std::vector<LocalPage> select_pages(const ModelConfig& cfg, const QueryPoint& target,
                                    Point tx_pos, const ReferenceScaffold& scaffold);

// Local refinement: attention over reference pages seeded from the
// transmitter embedding.  Reference RSS enters standardized as
// (rss - rss_mean) / rss_scale.  `attn_out`, when given, receives the
// attention weights in page order; `page_order` permutes the processing
// order of the selected pages (identity when null) so symmetry can be
// probed from tests.
Tape::Id local_stage(Tape& tape, const BoundParams& p, const ModelConfig& cfg,
                     const QueryPoint& target, Point tx_pos,
                     const ReferenceScaffold& scaffold, double rss_mean,
                     double rss_scale, std::vector<double>* attn_out = nullptr,
                     const std::vector<int>* page_order = nullptr);

struct GlobalNeighbor {
  Tape::Id z = -1;  // the neighbor target's local embedding on the same tape
  PairGeometry phi;
};

// Same-site refinement: attention over neighbor targets.  The center enters
// scores only; messages transform the neighbor embedding and edge embedding
// alone, and an empty neighbor set yields the zero vector.
Tape::Id global_stage(Tape& tape, const BoundParams& p, const ModelConfig& cfg,
                      Tape::Id z_center, const std::vector<GlobalNeighbor>& neighbors,
                      std::vector<double>* attn_out = nullptr);

struct EncoderOutput {
  Tape::Id z_local = -1;
  Tape::Id z_global = -1;
  Tape::Id s = -1;  // concatenation of the two
};

EncoderOutput encode_pair(Tape& tape, const BoundParams& p, const ModelConfig& cfg,
                          const QueryPoint& target, Point tx_pos,
                          const ReferenceScaffold& scaffold,
                          const std::vector<GlobalNeighbor>& neighbors,
                          double rss_mean, double rss_scale);

// Readouts over the concatenated state: single hidden layer of the latent
// width, tanh, scalar output.  Both operate in standardized units.
Tape::Id head_direct(Tape& tape, const BoundParams& p, const ModelConfig& cfg, Tape::Id s);
Tape::Id head_residual(Tape& tape, const BoundParams& p, const ModelConfig& cfg, Tape::Id s,
                       double prior_std);

// Fresh parameter store for the encoder and both readouts, every shape
// derived from the config.  Each tensor draws from its own name-derived
// stream, so adding a parameter never shifts the others.
ParamStore init_model_params(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace raymap
