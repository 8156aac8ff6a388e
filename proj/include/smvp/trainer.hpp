#pragma once

#include "smvp/config.hpp"
#include "smvp/synthdata.hpp"

namespace smvp::train {

struct TrainResult {
  int64_t steps_done = 0;
  std::string checkpoint_path;
  std::string loss_log_path;
  bool nan_abort = false;
  std::string abort_message;
};

/// Window sampling: step k draws batch_size (sequence, start) pairs from
/// Rng(mix(seed, "batch", k)); noise derives from (seed, "noise", k).
/// Resuming from a checkpoint therefore reproduces the continuous run
/// exactly.
struct WindowPick {
  int64_t sequence;
  int64_t start;
};

std::vector<WindowPick> pick_windows(uint64_t seed, int64_t step,
                                     int64_t batch_size, int64_t n_sequences,
                                     int64_t seq_frames, int64_t window);

/// Stacks one frame index across picked windows into a [B,3,H,W] tensor.
std::vector<diff::TensorT<float>> stack_windows(
    const std::vector<synth::SequenceBatch>& data,
    const std::vector<WindowPick>& picks, int64_t window);

/// Full training loop: loads nothing, writes loss CSV and periodic
/// checkpoints under cfg.out_dir. On a non-finite loss the last good
/// checkpoint is kept, a breakdown dump is written, and nan_abort is set.
TrainResult run_training(model::Model<float>& m, diff::AdamState<float>& opt,
                         const config::RunConfig& cfg,
                         const std::vector<synth::SequenceBatch>& data,
                         int64_t start_step = 0);

}  // namespace smvp::train
