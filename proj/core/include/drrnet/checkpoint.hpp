#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "drrnet/network.hpp"

namespace drr {

inline constexpr const char* kCheckpointHeader = "DRRNET-CKPT v1";

/// Pretrained parameters in f64 plus the topology they belong to.
///
/// File layout (text):
///   DRRNET-CKPT v1
///   model.width = 32            (one line per NetworkConfig field)
///   ...
///   params 62
///   stage0.block0.Wq dims 32 32 :
///   <values, whitespace separated, 17 significant digits>
struct Checkpoint {
  struct Record {
    std::string name;
    Shape shape;
    std::vector<double> values;

    friend bool operator==(const Record&, const Record&) = default;
  };

  NetworkConfig config;
  std::vector<Record> records;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

template <Scalar T>
Checkpoint make_checkpoint(const Backbone<T>& backbone);

/// Rebuilds the backbone, checking the stored topology against `expected`.
/// Mismatches raise ConfigError listing every differing field or record.
template <Scalar T>
Backbone<T> backbone_from_checkpoint(const Checkpoint& ckpt, const NetworkConfig& expected);

/// Same, trusting the topology stored in the checkpoint.
template <Scalar T>
Backbone<T> backbone_from_checkpoint(const Checkpoint& ckpt);

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace drr
