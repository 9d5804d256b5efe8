#pragma once

#include <map>
#include <string>
#include <vector>

#include "uio/tensor.hpp"

namespace uio {

// Named-tensor container with a JSON metadata header. One format serves
// model weights, optimizer state (names under "opt/") and VQ codebooks.
//
// Layout: 8-byte magic "UIOCKPT\n", u32 version, u32 header length, JSON
// header {version, meta, tensors:[{name, shape, offset, dtype:"f64"}]},
// then raw little-endian f64 payloads. Save/load round trips are bit-exact;
// tensors are stored in name order so equal contents give equal bytes.
class Checkpoint {
 public:
  std::string meta_json = "{}";  // configs, vocab layout, step counters

  void put(const std::string& name, Tensor t);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  std::vector<std::string> names() const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  std::map<std::string, Tensor> tensors_;
};

}  // namespace uio
