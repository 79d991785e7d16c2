// Coder subprocess: reads length-prefixed request frames on stdin and answers
// each with the reference range coder on stdout until EOF.

#include <cstdio>
#include <iostream>

#include "lrvc/entropy/backend.hpp"

namespace {

bool read_exact(uint8_t* p, size_t n) {
  size_t off = 0;
  while (off < n) {
    const size_t r = std::fread(p + off, 1, n - off, stdin);
    if (r == 0) return false;
    off += r;
  }
  return true;
}

}  // namespace

int main() {
  std::vector<uint8_t> payload;
  for (;;) {
    uint8_t len_b[4];
    if (!read_exact(len_b, 4)) return 0;
    const uint32_t len = lrvc::wire::In(len_b).u32();
    payload.resize(len);
    if (len && !read_exact(payload.data(), len)) {
      std::cerr << "lrvc_coder_server: truncated request\n";
      return 3;
    }
    const auto resp = lrvc::wire::serve(lrvc::reference_backend(), payload);
    std::fwrite(resp.data(), 1, resp.size(), stdout);
    std::fflush(stdout);
  }
}
