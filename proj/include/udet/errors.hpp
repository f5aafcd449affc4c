// Copyright 2026 the udet authors
// SPDX-License-Identifier: Apache-2.0

#ifndef UDET_ERRORS_HPP
#define UDET_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace udet {

/// Base class for all toolkit errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// model-core
struct NonConvergence : Error { using Error::Error; };
struct SingularJacobian : Error { using Error::Error; };
struct InvalidModel : Error { using Error::Error; };

// estimation
struct RankDeficient : Error { using Error::Error; };
struct SingularH : Error { using Error::Error; };

// oed
struct NoFeasibleDesign : Error { using Error::Error; };
struct NonFiniteC : Error { using Error::Error; };

// stats
struct DomainError : Error { using Error::Error; };
struct SingularC : Error { using Error::Error; };
struct SampleTooSmall : Error { using Error::Error; };
struct ConstantSample : Error { using Error::Error; };
struct OddSeriesCount : Error { using Error::Error; };
struct NegativeInput : Error { using Error::Error; };
struct EmptySplit : Error { using Error::Error; };
struct NormalityViolation : Error { using Error::Error; };

// press-demo
struct InvalidTopology : Error { using Error::Error; };
struct UninitializedState : Error { using Error::Error; };
struct UntrainedModel : Error { using Error::Error; };
struct DegenerateTraining : Error { using Error::Error; };
struct ZeroRealizedForce : Error { using Error::Error; };

// io
struct MalformedRow : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct NonFiniteValue : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

}  // namespace udet

#endif  // UDET_ERRORS_HPP
