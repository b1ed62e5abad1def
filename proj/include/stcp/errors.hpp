// Exception types shared across the library. Each maps to one failure
// mode named in the module contracts; all derive from StcpError so callers
// can catch the whole family at once.

#pragma once

#include <stdexcept>
#include <string>

namespace stcp {

struct StcpError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateDesign final : StcpError { using StcpError::StcpError; };
struct InvalidLevel final : StcpError { using StcpError::StcpError; };
struct InvalidAlpha final : StcpError { using StcpError::StcpError; };
struct EmptyInput final : StcpError { using StcpError::StcpError; };
struct NonFinite final : StcpError { using StcpError::StcpError; };
struct BracketFailure final : StcpError { using StcpError::StcpError; };
struct DegenerateDensity final : StcpError { using StcpError::StcpError; };
struct InfeasibleAll final : StcpError { using StcpError::StcpError; };
struct TooFewValues final : StcpError { using StcpError::StcpError; };
struct TooFewPoints final : StcpError { using StcpError::StcpError; };
struct NonPositiveBase final : StcpError { using StcpError::StcpError; };
struct DegenerateReference final : StcpError { using StcpError::StcpError; };
struct ConfigError final : StcpError { using StcpError::StcpError; };

} // namespace stcp
