#pragma once

#include <stdexcept>
#include <string>

namespace vmr {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define VMR_DEFINE_ERROR(Name)           \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  };

VMR_DEFINE_ERROR(GimbalLock)
VMR_DEFINE_ERROR(FrameMismatch)
VMR_DEFINE_ERROR(TooFewPoints)
VMR_DEFINE_ERROR(InvalidArgument)
VMR_DEFINE_ERROR(IoError)
VMR_DEFINE_ERROR(ConfigError)
VMR_DEFINE_ERROR(EmptyStore)
VMR_DEFINE_ERROR(EmptyRoi)
VMR_DEFINE_ERROR(NoGroundPlane)
VMR_DEFINE_ERROR(Degenerate)
VMR_DEFINE_ERROR(DtOutOfRange)
VMR_DEFINE_ERROR(TrajectoryOutOfBounds)
VMR_DEFINE_ERROR(NoOverlap)

#undef VMR_DEFINE_ERROR

/// A registration stage of the indoor flow failed (1 = ground, 2 = planar).
class StageFailed : public Error {
 public:
  StageFailed(int stage, const std::string& why)
      : Error("registration stage " + std::to_string(stage) + " failed: " + why), stage_(stage) {}
  int stage() const noexcept { return stage_; }

 private:
  int stage_;
};

/// A registration converged but its fitness or inlier RMSE fell outside the gate.
class GateRejected : public Error {
 public:
  GateRejected(double fitness, double rmse)
      : Error("registration gated out (fitness " + std::to_string(fitness) + ", rmse " +
              std::to_string(rmse) + ")"),
        fitness_(fitness),
        rmse_(rmse) {}
  double fitness() const noexcept { return fitness_; }
  double rmse() const noexcept { return rmse_; }

 private:
  double fitness_;
  double rmse_;
};

}  // namespace vmr
