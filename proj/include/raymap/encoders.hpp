#pragma once

#include <map>
#include <string>

#include "raymap/geo.hpp"
#include "raymap/optim.hpp"
#include "raymap/tape.hpp"

namespace raymap {

struct EncoderConfig {
  int bins = 256;         // anchors per geometric component
  int comp_width = 16;    // embedding width per component (and LoS prototype)
  int latent = 128;       // d
  int branch_width = 64;  // f_ref position / rss branch outputs
  int ref_hidden = 128;   // f_ref fusion MLP hidden width
  int edge_hidden = 64;   // edge fusion MLP hidden width
  int edge_width = 32;    // fused edge embedding width
  double leaky_slope = 0.2;
  double r0 = 1.0;  // coordinate normalization scale, meters
};

// Ordered triad geometry of one reference page: target-reference,
// reference-transmitter, and the shared target-transmitter anchor relation.
struct PageDescriptor {
  PairGeometry tr;
  PairGeometry rb;
  PairGeometry tb;
};

// Binds a parameter store onto one tape so model code can address weights
// by name.  `trainable` false registers constants instead of params, which
// skips gradient bookkeeping on inference passes.
struct BoundParams {
  Tape* tape = nullptr;
  std::map<std::string, Tape::Id> ids;

  Tape::Id at(const std::string& name) const;
};
BoundParams bind_params(Tape& tape, const ParamStore& store, bool trainable);

// Squashed-distance codebook lookup: s = d/(1+d) over uniform anchors on
// [0,1], linear interpolation of the bracketing pair.  `d` is the
// R0-normalized distance.
Tape::Id encode_distance(Tape& tape, Tape::Id codebook, int bins, double d);

// Circular codebook lookup over [-pi, pi) with wrap-around interpolation.
Tape::Id encode_bearing(Tape& tape, Tape::Id codebook, int bins, double theta);

// One of four agreement prototypes keyed by the (target, reference) flags.
Tape::Id los_embed(Tape& tape, Tape::Id prototypes, char s_t, char s_r);

// Bias-free linear projection of R0-normalized transmitter coordinates.
Tape::Id f_tx(Tape& tape, const BoundParams& p, const EncoderConfig& cfg, Point p_b);

// Reference encoder over (position relative to the transmitter, standardized
// RSS): two linear branches, concatenated, fused by a two-layer tanh MLP.
Tape::Id f_ref(Tape& tape, const BoundParams& p, const EncoderConfig& cfg, Point d_rb,
               double rss_std);

// Local edge encoder: six geometric codebook embeddings (distance and
// bearing for each of the three ordered relations) plus the LoS agreement
// prototype, fused to a width-32 embedding.
Tape::Id f_edge_local(Tape& tape, const BoundParams& p, const EncoderConfig& cfg,
                      const PageDescriptor& page, char s_t, char s_r);

// Global edge encoder: same geometric scheme over the single target-target
// relation.
Tape::Id f_edge_global(Tape& tape, const BoundParams& p, const EncoderConfig& cfg,
                       const PairGeometry& phi);

}  // namespace raymap
