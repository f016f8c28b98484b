#pragma once

// On-disk formats, all little-endian:
//   STDF  dataset:    "STDF" u8 ver=1, u32 T, u32 N, u32 C, u16 interval, T*N*C float32
//   STGF  graphs:     "STGF" u8 ver=1, u32 N, N*N float32 A_hat_connection, N*N float32 A_hat_dtw
//   GRMD  checkpoint: "GRMD" u8 ver=1, u32 len + canonical config JSON, u32 records, then per
//                     record: u32 len + path, u32 rank, rank * u32 dims, float32 payload
// Readers check the declared sizes against the file length before allocating.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gramode/graph.hpp"
#include "gramode/model.hpp"

namespace gramode {

struct Dataset {
  std::size_t steps = 0;     // T
  std::size_t nodes = 0;     // N
  std::size_t channels = 0;  // C_raw
  std::uint16_t interval_minutes = 5;
  std::vector<float> data;   // T x N x C row-major

  float at(std::size_t t, std::size_t n, std::size_t c) const { return data[(t * nodes + n) * channels + c]; }
  // One series per node for channel c.
  std::vector<std::vector<double>> node_series(std::size_t c, std::size_t begin, std::size_t end) const;
};

Dataset read_stdf(const std::string& path);
void write_stdf(const Dataset& d, const std::string& path);

// CSV with header `from,to,cost`; cost is ignored.
EdgeList read_adjacency_csv(const std::string& path, std::size_t n_nodes);

void write_stgf(const TrafficGraph& g, const std::string& path);
// The binary adjacencies are not stored; only n_nodes and the A_hat fields are set.
TrafficGraph read_stgf(const std::string& path);

struct NormStats {
  std::vector<double> mean;  // per raw channel
  std::vector<double> std;
};

void save_checkpoint(const std::string& path, const Model& model, const NormStats& norm);
std::unique_ptr<Model> load_checkpoint(const std::string& path, NormStats& norm);

}  // namespace gramode
