#pragma once

#include <ostream>

namespace ub {

// Numeric self-audit: every analytic gradient is checked against central
// finite differences, the contrastive and metric implementations against
// plain re-derivations, and the softmax/debias invariants against exact
// expectations.  Streams one line per suite and returns true when every
// suite passes.
bool run_selfcheck(std::ostream& os);

}  // namespace ub
