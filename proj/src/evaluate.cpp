#include "smvp/evaluate.hpp"

#include <fstream>

#include "smvp/config.hpp"

namespace smvp::evaluate {

namespace {

Aggregate aggregate(const std::vector<double>& xs) {
  Aggregate a;
  a.n = static_cast<int64_t>(xs.size());
  if (xs.empty()) return a;
  for (double x : xs) a.mean += x;
  a.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double var = 0;
    for (double x : xs) var += (x - a.mean) * (x - a.mean);
    var /= static_cast<double>(xs.size() - 1);
    a.stderr_ = std::sqrt(var / static_cast<double>(xs.size()));
  }
  return a;
}

}  // namespace

EvalReport evaluate_model(model::Model<float>& m,
                          const std::vector<synth::SequenceBatch>& data,
                          const EvalOptions& opts) {
  const auto& mc = m.config();
  const int64_t horizon = opts.horizon > 0 ? opts.horizon : mc.n_pred_eval;
  EvalReport rep;
  rep.horizon = horizon;

  std::vector<double> psnr_seq, ssim_seq, fg_psnr_seq, bg_psnr_seq,
      fg_ssim_seq, bg_ssim_seq;
  std::vector<double> abs_rel_s, sq_rel_s, rmse_s, rmse_log_s, d1_s, d2_s,
      d3_s;
  std::vector<std::vector<double>> psnr_steps(static_cast<size_t>(horizon)),
      ssim_steps(static_cast<size_t>(horizon));
  std::vector<double> div_fg_all, div_bg_all;

  for (size_t si = 0; si < data.size(); ++si) {
    const auto& seq = data[si];
    if (seq.T < mc.n_cond + horizon) {
      ++rep.n_skipped;
      rep.notices.push_back("sequence " + std::to_string(si) +
                            " shorter than context + horizon; skipped");
      continue;
    }
    std::vector<metrics::Frame> context;
    for (int64_t t = 0; t < mc.n_cond; ++t)
      context.push_back(seq.frame_tensor(t));
    std::vector<metrics::Frame> gt;
    for (int64_t t = 0; t < horizon; ++t)
      gt.push_back(seq.frame_tensor(mc.n_cond + t));

    auto rollouts = m.rollout(context, horizon, opts.n_samples,
                              seq.intrinsics,
                              mix_seed(opts.seed, static_cast<uint64_t>(si)));
    std::vector<std::vector<metrics::Frame>> sample_frames;
    for (const auto& r : rollouts) {
      std::vector<metrics::Frame> fs;
      for (const auto& s : r.predicted) fs.push_back(s.final_frame);
      sample_frames.push_back(std::move(fs));
    }
    const size_t best = metrics::best_of_n(sample_frames, gt);
    rep.best_indices.push_back(best);
    const auto& chosen = rollouts[best];

    double psnr_acc = 0, ssim_acc = 0;
    for (int64_t t = 0; t < horizon; ++t) {
      const double p = metrics::psnr(chosen.predicted[t].final_frame, gt[t]);
      const double s = metrics::ssim(chosen.predicted[t].final_frame, gt[t],
                                     opts.ssim_window);
      psnr_acc += p;
      ssim_acc += s;
      psnr_steps[static_cast<size_t>(t)].push_back(p);
      ssim_steps[static_cast<size_t>(t)].push_back(s);
    }
    psnr_seq.push_back(psnr_acc / static_cast<double>(horizon));
    ssim_seq.push_back(ssim_acc / static_cast<double>(horizon));

    if (opts.with_masked) {
      double fp = 0, bp = 0, fscount = 0, fss = 0, bss = 0;
      int64_t n_masked = 0;
      for (int64_t t = 0; t < horizon; ++t) {
        auto mm = metrics::masked_metrics(chosen.predicted[t].final_frame,
                                          gt[t], seq.fg_tensor(mc.n_cond + t),
                                          opts.ssim_window);
        if (!mm.fg || !mm.bg) continue;
        fp += mm.fg->psnr;
        bp += mm.bg->psnr;
        fss += mm.fg->ssim;
        bss += mm.bg->ssim;
        ++n_masked;
      }
      (void)fscount;
      if (n_masked > 0) {
        fg_psnr_seq.push_back(fp / n_masked);
        bg_psnr_seq.push_back(bp / n_masked);
        fg_ssim_seq.push_back(fss / n_masked);
        bg_ssim_seq.push_back(bss / n_masked);
      } else {
        rep.notices.push_back("sequence " + std::to_string(si) +
                              ": no frames with both regions present");
      }
    }

    if (opts.with_depth) {
      double ar = 0, sr = 0, rm = 0, rl = 0, d1 = 0, d2 = 0, d3 = 0;
      for (int64_t t = 0; t < horizon; ++t) {
        auto dm = metrics::depth_metrics(chosen.predicted[t].depth,
                                         seq.depth_tensor(mc.n_cond + t),
                                         nullptr, true);
        ar += dm.abs_rel;
        sr += dm.sq_rel;
        rm += dm.rmse;
        rl += dm.rmse_log;
        d1 += dm.delta1;
        d2 += dm.delta2;
        d3 += dm.delta3;
      }
      abs_rel_s.push_back(ar / horizon);
      sq_rel_s.push_back(sr / horizon);
      rmse_s.push_back(rm / horizon);
      rmse_log_s.push_back(rl / horizon);
      d1_s.push_back(d1 / horizon);
      d2_s.push_back(d2 / horizon);
      d3_s.push_back(d3 / horizon);
    }

    if (opts.diversity_samples >= 2) {
      auto div_rolls =
          m.rollout(context, horizon, opts.diversity_samples, seq.intrinsics,
                    mix_seed(opts.seed, 0xd1f, static_cast<uint64_t>(si)));
      std::vector<std::vector<metrics::Frame>> div_frames;
      for (const auto& r : div_rolls) {
        std::vector<metrics::Frame> fs;
        for (const auto& s : r.predicted) fs.push_back(s.final_frame);
        div_frames.push_back(std::move(fs));
      }
      auto maps = metrics::diversity_std(div_frames);
      for (int64_t t = 0; t < horizon; ++t) {
        auto fg = metrics::masked_mean(maps[static_cast<size_t>(t)],
                                       seq.fg_tensor(mc.n_cond + t), true);
        auto bg = metrics::masked_mean(maps[static_cast<size_t>(t)],
                                       seq.fg_tensor(mc.n_cond + t), false);
        if (fg) div_fg_all.push_back(*fg);
        if (bg) div_bg_all.push_back(*bg);
      }
    }
    ++rep.n_sequences;
  }

  rep.psnr = aggregate(psnr_seq);
  rep.ssim = aggregate(ssim_seq);
  for (int64_t t = 0; t < horizon; ++t) {
    rep.psnr_per_step.push_back(aggregate(psnr_steps[static_cast<size_t>(t)]));
    rep.ssim_per_step.push_back(aggregate(ssim_steps[static_cast<size_t>(t)]));
  }
  if (!fg_psnr_seq.empty()) {
    rep.has_masked = true;
    rep.fg_psnr = aggregate(fg_psnr_seq);
    rep.bg_psnr = aggregate(bg_psnr_seq);
    rep.fg_ssim = aggregate(fg_ssim_seq);
    rep.bg_ssim = aggregate(bg_ssim_seq);
  }
  if (!abs_rel_s.empty()) {
    rep.has_depth = true;
    rep.abs_rel = aggregate(abs_rel_s);
    rep.sq_rel = aggregate(sq_rel_s);
    rep.rmse = aggregate(rmse_s);
    rep.rmse_log = aggregate(rmse_log_s);
    rep.delta1 = aggregate(d1_s);
    rep.delta2 = aggregate(d2_s);
    rep.delta3 = aggregate(d3_s);
  }
  if (!div_fg_all.empty() && !div_bg_all.empty()) {
    rep.has_diversity = true;
    rep.diversity_fg = aggregate(div_fg_all).mean;
    rep.diversity_bg = aggregate(div_bg_all).mean;
  }
  return rep;
}

namespace {

nlohmann::json agg_json(const Aggregate& a) {
  return {{"mean", a.mean}, {"stderr", a.stderr_}, {"n", a.n}};
}

}  // namespace

void write_report_json(const std::string& path, const EvalReport& rep,
                       const std::string& config_hash) {
  nlohmann::json j;
  j["config_hash"] = config_hash;
  j["build"] = config::build_id();
  j["n_sequences"] = rep.n_sequences;
  j["n_skipped"] = rep.n_skipped;
  j["horizon"] = rep.horizon;
  j["psnr"] = agg_json(rep.psnr);
  j["ssim"] = agg_json(rep.ssim);
  if (rep.has_masked) {
    j["fg"] = {{"psnr", agg_json(rep.fg_psnr)}, {"ssim", agg_json(rep.fg_ssim)}};
    j["bg"] = {{"psnr", agg_json(rep.bg_psnr)}, {"ssim", agg_json(rep.bg_ssim)}};
  }
  if (rep.has_depth)
    j["depth"] = {{"abs_rel", agg_json(rep.abs_rel)},
                  {"sq_rel", agg_json(rep.sq_rel)},
                  {"rmse", agg_json(rep.rmse)},
                  {"rmse_log", agg_json(rep.rmse_log)},
                  {"delta_1", agg_json(rep.delta1)},
                  {"delta_2", agg_json(rep.delta2)},
                  {"delta_3", agg_json(rep.delta3)}};
  if (rep.has_diversity)
    j["diversity"] = {{"fg_std", rep.diversity_fg},
                      {"bg_std", rep.diversity_bg},
                      {"ratio", rep.diversity_bg > 0
                                    ? rep.diversity_fg / rep.diversity_bg
                                    : 0.0}};
  j["best_sample_indices"] = rep.best_indices;
  j["notices"] = rep.notices;
  std::ofstream os(path);
  if (!os) throw IoError("cannot write report '" + path + "'");
  os << j.dump(2) << "\n";
}

void write_curves_csv(const std::string& path, const EvalReport& rep,
                      const std::string& config_hash) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write curves '" + path + "'");
  os << "# config=" << config_hash << " build=" << config::build_id() << "\n";
  os << "step,metric,mean,stderr\n";
  for (size_t t = 0; t < rep.psnr_per_step.size(); ++t) {
    os << t << ",psnr," << rep.psnr_per_step[t].mean << ','
       << rep.psnr_per_step[t].stderr_ << "\n";
    os << t << ",ssim," << rep.ssim_per_step[t].mean << ','
       << rep.ssim_per_step[t].stderr_ << "\n";
  }
}

std::string report_text_table(const EvalReport& rep) {
  char buf[512];
  std::string out;
  out += "metric        mean      stderr    n\n";
  auto row = [&](const char* name, const Aggregate& a) {
    std::snprintf(buf, sizeof(buf), "%-12s %9.4f  %8.4f  %4lld\n", name,
                  a.mean, a.stderr_, static_cast<long long>(a.n));
    out += buf;
  };
  row("psnr", rep.psnr);
  row("ssim", rep.ssim);
  if (rep.has_masked) {
    row("fg_psnr", rep.fg_psnr);
    row("bg_psnr", rep.bg_psnr);
    row("fg_ssim", rep.fg_ssim);
    row("bg_ssim", rep.bg_ssim);
  }
  if (rep.has_depth) {
    row("abs_rel", rep.abs_rel);
    row("sq_rel", rep.sq_rel);
    row("rmse", rep.rmse);
    row("rmse_log", rep.rmse_log);
    row("delta<1.25", rep.delta1);
    row("delta<1.25^2", rep.delta2);
    row("delta<1.25^3", rep.delta3);
  }
  if (rep.has_diversity) {
    std::snprintf(buf, sizeof(buf),
                  "diversity fg=%.6f bg=%.6f ratio=%.3f\n", rep.diversity_fg,
                  rep.diversity_bg,
                  rep.diversity_bg > 0 ? rep.diversity_fg / rep.diversity_bg
                                       : 0.0);
    out += buf;
  }
  return out;
}

}  // namespace smvp::evaluate
