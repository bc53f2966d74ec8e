#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dermnet/model.hpp"
#include "dermnet/rng.hpp"
#include "dermnet/tensor.hpp"

namespace testutil {

/// Self-deleting scratch directory under the system temp path.
struct TempDir {
  std::filesystem::path path;

  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path / name).string(); }
};

struct CommandResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

/// Runs a shell command, capturing stdout and stderr separately.
CommandResult run_command(const std::string& command);

std::vector<double> widen(std::span<const float> v);

std::vector<float> random_floats(dermnet::Rng& rng, size_t n, float lo, float hi);
dermnet::Tensor random_tensor(dermnet::Rng& rng, dermnet::Shape shape, float lo, float hi);

/// 16x16-input model with layer channels {2,3,4}; small enough for
/// finite-difference sweeps over every parameter. Consecutive skips only:
/// dense alignment cannot shrink the 3-channel input into 2 channels.
dermnet::ModelConfig tiny_config(dermnet::SkipMode mode = dermnet::SkipMode::kConsecutive);
dermnet::Model tiny_model(dermnet::SkipMode mode = dermnet::SkipMode::kConsecutive,
                          uint64_t seed = 5);
/// 16x16-input model with layer channels {4,5,6}: still small, and wide
/// enough that dense skips can pad every earlier source up to the layer
/// input.
dermnet::ModelConfig wide_config(dermnet::SkipMode mode);
dermnet::Model wide_model(dermnet::SkipMode mode, uint64_t seed = 5);
/// Random batch in [-0.5, 0.5], the range of mean-subtracted [0,1] pixels.
dermnet::Tensor tiny_batch(int batch, uint64_t seed, int size = 16, int channels = 3);

/// FNV-1a over the byte images of all trainable parameters and running stats.
uint64_t state_checksum(const dermnet::Model& model);

/// Result of comparing autodiff gradients against central differences of a
/// scalar f64 objective.
///
/// The error metric is |ad - fd| / max(|fd|, 0.05 * gscale) where gscale is
/// the largest finite-difference magnitude in the tensor: plain relative
/// error for coordinates that carry signal, absolute error at 5% of gradient
/// scale for coordinates near zero, where relative error is meaningless.
/// Coordinates where both sides are under 1e-6 count as agreement on a zero
/// gradient (a conv bias feeding batch norm has exactly-zero true gradient;
/// the autodiff side carries only float rounding there). Coordinates whose
/// one-sided slopes disagree are kinks (a maxpool argmax or relu boundary
/// crossed by the probe step); they are skipped and counted because no finite
/// difference exists there. Coordinates that fail at the primary step are
/// re-probed at step/10 and step/100, which clears slope jumps too small for
/// the kink detector while leaving genuine gradient bugs failing.
struct GradCheck {
  double max_rel_err = 0.0;
  size_t checked = 0;
  size_t skipped = 0;
  size_t worst_index = 0;
  double worst_ad = 0.0;
  double worst_fd = 0.0;
};

GradCheck check_gradient(std::span<const float> ad_grad,
                         const std::function<double(std::span<const double>)>& objective,
                         std::span<const double> x0, double step = 1e-3);

}  // namespace testutil
