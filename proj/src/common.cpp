#include "unibrain/common.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace ub {

const char* err_code_name(ErrCode code) {
  switch (code) {
    case ErrCode::io: return "io";
    case ErrCode::parse: return "parse";
    case ErrCode::validation: return "validation";
    case ErrCode::shape: return "shape";
    case ErrCode::config: return "config";
    case ErrCode::checkpoint: return "checkpoint";
    case ErrCode::runtime: return "runtime";
  }
  return "unknown";
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 kept away from 0 so log() stays finite.
  double u1 = 0.0;
  do {
    u1 = uniform01();
  } while (u1 <= 0.0);
  double u2 = uniform01();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = char(std::tolower((unsigned char)c));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace((unsigned char)s[b])) ++b;
  while (e > b && std::isspace((unsigned char)s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::string normalize_ws(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_ws = true;  // leading whitespace dropped
  for (char c : s) {
    if (std::isspace((unsigned char)c)) {
      if (!in_ws) out.push_back(' ');
      in_ws = true;
    } else {
      out.push_back(c);
      in_ws = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (std::isspace((unsigned char)c)) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

int max_threads() {
  if (const char* env = std::getenv("UNIBRAIN_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? int(hw) : 1;
}

void parallel_for(long n, const std::function<void(long, long)>& body) {
  if (n <= 0) return;
  long workers = std::min<long>(max_threads(), n);
  if (workers <= 1) {
    body(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(workers));
  long chunk = (n + workers - 1) / workers;
  for (long w = 0; w < workers; ++w) {
    long lo = w * chunk;
    long hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace ub
