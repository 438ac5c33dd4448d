#pragma once

#include <stdexcept>
#include <string>

namespace passyn {

enum class Errc {
  validation,       // malformed or inadmissible input data
  singular,         // singular operator / spectral overlap
  unstable,         // stability precondition violated
  no_stabilizing,   // Riccati: no stabilizing solution (imaginary-axis eigenvalues)
  not_converged,    // iterative method hit its cap
  infeasible,       // optimization problem infeasible
  ill_posed,        // algebraic loop / feedthrough inverse fails
  invariant,        // internal invariant violated
  io
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::validation: return "validation";
    case Errc::singular: return "singular";
    case Errc::unstable: return "unstable";
    case Errc::no_stabilizing: return "no_stabilizing";
    case Errc::not_converged: return "not_converged";
    case Errc::infeasible: return "infeasible";
    case Errc::ill_posed: return "ill_posed";
    case Errc::invariant: return "invariant";
    case Errc::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), code_(code), stage_(std::move(stage)) {}

  Errc code() const noexcept { return code_; }
  const std::string& stage() const noexcept { return stage_; }

 private:
  Errc code_;
  std::string stage_;
};

}  // namespace passyn
