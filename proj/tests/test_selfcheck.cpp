#include <doctest.h>

#include <sstream>

#include "unibrain/selfcheck.hpp"

TEST_CASE("the numeric self-audit passes end to end") {
  std::ostringstream out;
  bool ok = ub::run_selfcheck(out);
  INFO(out.str());
  CHECK(ok);
  // one line per suite plus the summary
  CHECK(out.str().find("gradient primitives") != std::string::npos);
  CHECK(out.str().find("full objective gradient") != std::string::npos);
  CHECK(out.str().find("contrastive vs definition") != std::string::npos);
  CHECK(out.str().find("duplicate debias mass") != std::string::npos);
  CHECK(out.str().find("rank metrics vs definition") != std::string::npos);
  CHECK(out.str().find("FAIL") == std::string::npos);
}
