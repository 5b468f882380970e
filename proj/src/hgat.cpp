#include "raymap/hgat.hpp"

#include <algorithm>

#include "raymap/errors.hpp"

namespace raymap {

ReferenceScaffold build_scaffold(int site, const std::vector<RefObs>& obs, int budget,
                                 std::uint64_t seed) {
  if (obs.empty()) throw ValidationError("build_scaffold: no observations for site");
  if (budget < 1) throw ValidationError("build_scaffold: budget must be at least 1");

  std::vector<Point> pts;
  pts.reserve(obs.size());
  for (const auto& o : obs) pts.push_back(o.pos);

  Rng rng(seed);
  const std::vector<int> keep = stratified_sample_indices(pts, budget, rng);

  ReferenceScaffold sc;
  sc.site = site;
  sc.budget = budget;
  sc.refs.reserve(keep.size());
  std::vector<Point> kept_pts;
  kept_pts.reserve(keep.size());
  for (int i : keep) {
    sc.refs.push_back(obs[static_cast<std::size_t>(i)]);
    kept_pts.push_back(obs[static_cast<std::size_t>(i)].pos);
  }
  sc.index = SpatialIndex(kept_pts);
  return sc;
}

ReferenceScaffold scaffold_from_dataset(const Dataset& ds, int site, int budget,
                                        std::uint64_t seed) {
  const auto rows = ds.select(site, Role::Obs);
  std::vector<RefObs> obs;
  obs.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    obs.push_back({static_cast<int>(i), {rows[i]->x, rows[i]->y}, rows[i]->rss_dbm,
                   rows[i]->los});
  if (budget <= 0) budget = static_cast<int>(obs.size());
  return build_scaffold(site, obs, budget, seed);
}

std::vector<LocalPage> select_pages(const ModelConfig& cfg, const QueryPoint& target,
                                    Point tx_pos, const ReferenceScaffold& scaffold) {
  if (scaffold.refs.empty()) throw ValidationError("select_pages: empty scaffold");
  const auto near = scaffold.index.knn(target.pos, cfg.k_ref);
  const PairGeometry tb = pair_geometry(target.pos, tx_pos);

  std::vector<LocalPage> pages;
  pages.reserve(near.size());
  for (const auto& nb : near) {
    const RefObs& ref = scaffold.refs[static_cast<std::size_t>(nb.id)];
    LocalPage pg;
    pg.ref = &ref;
    pg.geom.tr = pair_geometry(target.pos, ref.pos);
    pg.geom.rb = pair_geometry(ref.pos, tx_pos);
    pg.geom.tb = tb;
    pages.push_back(pg);
  }
  return pages;
}

Tape::Id local_stage(Tape& tape, const BoundParams& p, const ModelConfig& cfg,
                     const QueryPoint& target, Point tx_pos,
                     const ReferenceScaffold& scaffold, double rss_mean,
                     double rss_scale, std::vector<double>* attn_out,
                     const std::vector<int>* page_order) {
  std::vector<LocalPage> pages = select_pages(cfg, target, tx_pos, scaffold);
  if (page_order) {
    if (page_order->size() != pages.size())
      throw ValidationError("local_stage: page_order size mismatch");
    std::vector<LocalPage> permuted;
    permuted.reserve(pages.size());
    for (int i : *page_order) permuted.push_back(pages[static_cast<std::size_t>(i)]);
    pages = std::move(permuted);
  }

  std::vector<Tape::Id> us;
  us.reserve(pages.size());
  Tape::Id scores = -1;
  for (const auto& pg : pages) {
    const Point d_rb{pg.ref->pos.x - tx_pos.x, pg.ref->pos.y - tx_pos.y};
    const double rss_std = (pg.ref->rss_dbm - rss_mean) / rss_scale;
    const Tape::Id h_r = f_ref(tape, p, cfg.enc, d_rb, rss_std);
    const Tape::Id g = f_edge_local(tape, p, cfg.enc, pg.geom, target.los, pg.ref->los);
    const Tape::Id u = tape.hconcat(h_r, g);
    us.push_back(u);
    const Tape::Id e = tape.matmul(
        tape.leaky_relu(tape.matmul(u, p.at("hgat.local.attn.w")), cfg.enc.leaky_slope),
        p.at("hgat.local.attn.a"));
    scores = (scores < 0) ? e : tape.hconcat(scores, e);
  }
  const Tape::Id alpha = tape.softmax_row(scores);
  if (attn_out) *attn_out = tape.value(alpha).data;

  Tape::Id msg_sum = -1;
  for (std::size_t r = 0; r < us.size(); ++r) {
    const Tape::Id m = tape.smul(tape.elem(alpha, 0, static_cast<int>(r)),
                                 tape.matmul(us[r], p.at("hgat.local.msg.w")));
    msg_sum = (msg_sum < 0) ? m : tape.add(msg_sum, m);
  }

  const Tape::Id h_b = f_tx(tape, p, cfg.enc, tx_pos);
  return tape.tanh_(tape.add(tape.matmul(h_b, p.at("hgat.local.center.w")), msg_sum));
}

Tape::Id global_stage(Tape& tape, const BoundParams& p, const ModelConfig& cfg,
                      Tape::Id z_center, const std::vector<GlobalNeighbor>& neighbors,
                      std::vector<double>* attn_out) {
  if (neighbors.empty()) {
    if (attn_out) attn_out->clear();
    return tape.constant(Array(1, cfg.enc.latent));
  }

  std::vector<Tape::Id> msg_in;
  msg_in.reserve(neighbors.size());
  Tape::Id scores = -1;
  for (const auto& nb : neighbors) {
    const Tape::Id g = f_edge_global(tape, p, cfg.enc, nb.phi);
    const Tape::Id tail = tape.hconcat(nb.z, g);
    msg_in.push_back(tail);
    const Tape::Id u = tape.hconcat(z_center, tail);
    const Tape::Id e = tape.matmul(
        tape.leaky_relu(tape.matmul(u, p.at("hgat.global.attn.w")), cfg.enc.leaky_slope),
        p.at("hgat.global.attn.a"));
    scores = (scores < 0) ? e : tape.hconcat(scores, e);
  }
  const Tape::Id beta = tape.softmax_row(scores);
  if (attn_out) *attn_out = tape.value(beta).data;

  Tape::Id out = -1;
  for (std::size_t i = 0; i < msg_in.size(); ++i) {
    const Tape::Id m = tape.smul(tape.elem(beta, 0, static_cast<int>(i)),
                                 tape.matmul(msg_in[i], p.at("hgat.global.msg.w")));
    out = (out < 0) ? m : tape.add(out, m);
  }
  return out;
}

EncoderOutput encode_pair(Tape& tape, const BoundParams& p, const ModelConfig& cfg,
                          const QueryPoint& target, Point tx_pos,
                          const ReferenceScaffold& scaffold,
                          const std::vector<GlobalNeighbor>& neighbors,
                          double rss_mean, double rss_scale) {
  EncoderOutput out;
  out.z_local = local_stage(tape, p, cfg, target, tx_pos, scaffold, rss_mean, rss_scale);
  out.z_global = global_stage(tape, p, cfg, out.z_local, neighbors);
  out.s = tape.hconcat(out.z_local, out.z_global);
  return out;
}

namespace {

Tape::Id readout(Tape& tape, const BoundParams& p, Tape::Id in, const std::string& prefix) {
  const Tape::Id h = tape.tanh_(tape.add(tape.matmul(in, p.at(prefix + ".h.w")),
                                         p.at(prefix + ".h.b")));
  return tape.add(tape.matmul(h, p.at(prefix + ".out.w")), p.at(prefix + ".out.b"));
}

}  // namespace

Tape::Id head_direct(Tape& tape, const BoundParams& p, const ModelConfig& cfg, Tape::Id s) {
  (void)cfg;
  return readout(tape, p, s, "head.direct");
}

Tape::Id head_residual(Tape& tape, const BoundParams& p, const ModelConfig& cfg, Tape::Id s,
                       double prior_std) {
  (void)cfg;
  const Tape::Id prior = tape.constant(Array::row_vec({prior_std}));
  return readout(tape, p, tape.hconcat(s, prior), "head.residual");
}

namespace {

std::uint64_t name_seed(std::uint64_t base, const std::string& name) {
  return base ^ (0x9e3779b97f4a7c15ULL + fnv1a64(name));
}

void add_weight(ParamStore& ps, std::uint64_t seed, const std::string& name, int rows,
                int cols, int fan_in) {
  ps[name] = init_params(rows, cols, fan_in, name_seed(seed, name));
}

void add_bias(ParamStore& ps, const std::string& name, int cols) {
  ps[name] = Array(1, cols);
}

void add_mlp(ParamStore& ps, std::uint64_t seed, const std::string& prefix, int in,
             int hidden, int out) {
  add_weight(ps, seed, prefix + ".h.w", in, hidden, in);
  add_bias(ps, prefix + ".h.b", hidden);
  add_weight(ps, seed, prefix + ".out.w", hidden, out, hidden);
  add_bias(ps, prefix + ".out.b", out);
}

}  // namespace

ParamStore init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
  const int d = cfg.enc.latent;
  const int cw = cfg.enc.comp_width;
  const int bw = cfg.enc.branch_width;
  const int ew = cfg.enc.edge_width;
  const int u_w = d + ew;

  ParamStore ps;
  add_weight(ps, seed, "hgat.local.tx.w", 2, d, 2);

  add_weight(ps, seed, "hgat.local.ref.pos.w", 2, bw, 2);
  add_bias(ps, "hgat.local.ref.pos.b", bw);
  add_weight(ps, seed, "hgat.local.ref.rss.w", 1, bw, 1);
  add_bias(ps, "hgat.local.ref.rss.b", bw);
  add_weight(ps, seed, "hgat.local.ref.fuse1.w", 2 * bw, cfg.enc.ref_hidden, 2 * bw);
  add_bias(ps, "hgat.local.ref.fuse1.b", cfg.enc.ref_hidden);
  add_weight(ps, seed, "hgat.local.ref.fuse2.w", cfg.enc.ref_hidden, d, cfg.enc.ref_hidden);
  add_bias(ps, "hgat.local.ref.fuse2.b", d);

  for (const std::string scope : {"hgat.local.edge", "hgat.global.edge"}) {
    add_weight(ps, seed, scope + ".dist_codebook", cfg.enc.bins, cw, cw);
    add_weight(ps, seed, scope + ".bear_codebook", cfg.enc.bins, cw, cw);
    const int geom_in = (scope == "hgat.local.edge") ? 7 * cw : 2 * cw;
    add_weight(ps, seed, scope + ".fuse1.w", geom_in, cfg.enc.edge_hidden, geom_in);
    add_bias(ps, scope + ".fuse1.b", cfg.enc.edge_hidden);
    add_weight(ps, seed, scope + ".fuse2.w", cfg.enc.edge_hidden, ew, cfg.enc.edge_hidden);
    add_bias(ps, scope + ".fuse2.b", ew);
  }
  add_weight(ps, seed, "hgat.local.edge.los", 4, cw, cw);

  add_weight(ps, seed, "hgat.local.attn.w", u_w, d, u_w);
  add_weight(ps, seed, "hgat.local.attn.a", d, 1, d);
  add_weight(ps, seed, "hgat.local.msg.w", u_w, d, u_w);
  add_weight(ps, seed, "hgat.local.center.w", d, d, d);

  add_weight(ps, seed, "hgat.global.attn.w", 2 * d + ew, d, 2 * d + ew);
  add_weight(ps, seed, "hgat.global.attn.a", d, 1, d);
  add_weight(ps, seed, "hgat.global.msg.w", u_w, d, u_w);

  add_mlp(ps, seed, "head.direct", 2 * d, d, 1);
  add_mlp(ps, seed, "head.residual", 2 * d + 1, d, 1);
  return ps;
}

}  // namespace raymap
