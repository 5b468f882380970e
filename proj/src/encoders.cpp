#include "raymap/encoders.hpp"

#include <cmath>

#include "raymap/errors.hpp"

namespace raymap {

namespace {
constexpr double kPi = 3.141592653589793238462643383279502884;

// Always blends two anchors, even at an exact anchor hit (weights 1 and 0
// reproduce the anchor bit-for-bit).  A data-dependent shortcut would make
// the recorded op count vary with the input, which the complexity
// accounting forbids.
Tape::Id blend(Tape& tape, Tape::Id codebook, int i0, int i1, double frac) {
  const Tape::Id a = tape.row(codebook, i0);
  const Tape::Id b = tape.row(codebook, i1);
  return tape.add(tape.scale(a, 1.0 - frac), tape.scale(b, frac));
}
}  // namespace

Tape::Id BoundParams::at(const std::string& name) const {
  auto it = ids.find(name);
  if (it == ids.end()) throw NotFoundError("model param '" + name + "' not bound");
  return it->second;
}

BoundParams bind_params(Tape& tape, const ParamStore& store, bool trainable) {
  BoundParams bp;
  bp.tape = &tape;
  for (const auto& [name, arr] : store)
    bp.ids[name] = trainable ? tape.param(name, arr) : tape.constant(arr);
  return bp;
}

Tape::Id encode_distance(Tape& tape, Tape::Id codebook, int bins, double d) {
  if (d < 0.0) throw ValidationError("encode_distance: negative distance");
  const double s = d / (1.0 + d);
  double t = s * static_cast<double>(bins - 1);
  int i0 = static_cast<int>(std::floor(t));
  if (i0 > bins - 2) i0 = bins - 2;
  const double frac = t - static_cast<double>(i0);
  return blend(tape, codebook, i0, i0 + 1, frac);
}

Tape::Id encode_bearing(Tape& tape, Tape::Id codebook, int bins, double theta) {
  const double w = wrap_bearing(theta);
  double t = (w + kPi) / (2.0 * kPi) * static_cast<double>(bins);
  int i0 = static_cast<int>(std::floor(t));
  if (i0 >= bins) i0 = 0;  // guards the w -> pi rounding fringe
  if (i0 < 0) i0 = 0;
  const double frac = t - std::floor(t);
  const int i1 = (i0 + 1) % bins;
  return blend(tape, codebook, i0, i1, frac);
}

Tape::Id los_embed(Tape& tape, Tape::Id prototypes, char s_t, char s_r) {
  auto bit = [](char c) {
    if (c == 'L') return 0;
    if (c == 'N') return 1;
    throw ValidationError("los_embed: flag must be L or N");
  };
  return tape.row(prototypes, bit(s_t) * 2 + bit(s_r));
}

Tape::Id f_tx(Tape& tape, const BoundParams& p, const EncoderConfig& cfg, Point p_b) {
  const Tape::Id in = tape.constant(Array::row_vec({p_b.x / cfg.r0, p_b.y / cfg.r0}));
  return tape.matmul(in, p.at("hgat.local.tx.w"));
}

Tape::Id f_ref(Tape& tape, const BoundParams& p, const EncoderConfig& cfg, Point d_rb,
               double rss_std) {
  const Tape::Id pos_in =
      tape.constant(Array::row_vec({d_rb.x / cfg.r0, d_rb.y / cfg.r0}));
  const Tape::Id rss_in = tape.constant(Array::row_vec({rss_std}));
  const Tape::Id pos = tape.add(tape.matmul(pos_in, p.at("hgat.local.ref.pos.w")),
                                p.at("hgat.local.ref.pos.b"));
  const Tape::Id rss = tape.add(tape.matmul(rss_in, p.at("hgat.local.ref.rss.w")),
                                p.at("hgat.local.ref.rss.b"));
  const Tape::Id cat = tape.hconcat(pos, rss);
  const Tape::Id h1 = tape.tanh_(tape.add(tape.matmul(cat, p.at("hgat.local.ref.fuse1.w")),
                                          p.at("hgat.local.ref.fuse1.b")));
  return tape.tanh_(tape.add(tape.matmul(h1, p.at("hgat.local.ref.fuse2.w")),
                             p.at("hgat.local.ref.fuse2.b")));
}

namespace {

Tape::Id geom_pair(Tape& tape, const BoundParams& p, const EncoderConfig& cfg,
                   const PairGeometry& phi, const std::string& prefix) {
  const Tape::Id d =
      encode_distance(tape, p.at(prefix + ".dist_codebook"), cfg.bins, phi.distance / cfg.r0);
  const Tape::Id b = encode_bearing(tape, p.at(prefix + ".bear_codebook"), cfg.bins, phi.bearing);
  return tape.hconcat(d, b);
}

}  // namespace

Tape::Id f_edge_local(Tape& tape, const BoundParams& p, const EncoderConfig& cfg,
                      const PageDescriptor& page, char s_t, char s_r) {
  const std::string prefix = "hgat.local.edge";
  Tape::Id cat = geom_pair(tape, p, cfg, page.tr, prefix);
  cat = tape.hconcat(cat, geom_pair(tape, p, cfg, page.rb, prefix));
  cat = tape.hconcat(cat, geom_pair(tape, p, cfg, page.tb, prefix));
  cat = tape.hconcat(cat, los_embed(tape, p.at(prefix + ".los"), s_t, s_r));
  const Tape::Id h1 = tape.tanh_(tape.add(tape.matmul(cat, p.at(prefix + ".fuse1.w")),
                                          p.at(prefix + ".fuse1.b")));
  return tape.add(tape.matmul(h1, p.at(prefix + ".fuse2.w")), p.at(prefix + ".fuse2.b"));
}

Tape::Id f_edge_global(Tape& tape, const BoundParams& p, const EncoderConfig& cfg,
                       const PairGeometry& phi) {
  const std::string prefix = "hgat.global.edge";
  const Tape::Id cat = geom_pair(tape, p, cfg, phi, prefix);
  const Tape::Id h1 = tape.tanh_(tape.add(tape.matmul(cat, p.at(prefix + ".fuse1.w")),
                                          p.at(prefix + ".fuse1.b")));
  return tape.add(tape.matmul(h1, p.at(prefix + ".fuse2.w")), p.at(prefix + ".fuse2.b"));
}

}  // namespace raymap
