#pragma once

#include <string>
#include <vector>

#include "mtfnet/binio.hpp"
#include "mtfnet/ingest.hpp"
#include "mtfnet/mtf.hpp"

namespace mtfnet {

/// Slot archive: one "MTFS" file per slot (series, label, packed spatial
/// tensor) plus a manifest.json carrying the shared link table, node list,
/// tau and sample count.
void write_slot_archive(const std::string& dir, const SlicedDataset& dataset);
SlicedDataset read_slot_archive(const std::string& dir);

struct MtfArchiveMeta {
    int q = 8;
    int m = 16;
    double sigma = 1.0;
    QuantMode mode = QuantMode::GaussianFixed;
    double temperature = 0.1;
};

/// MTF archive: one "MTFF" file per slot holding the L blurred fields.
void write_mtf_archive(const std::string& dir, const std::vector<MtfTensor<Real>>& tensors,
                       const MtfArchiveMeta& meta);
std::vector<MtfTensor<Real>> read_mtf_archive(const std::string& dir, MtfArchiveMeta* meta = nullptr);

/// Grayscale dump of one field (values in [0,1] scaled to 0..255).
void write_pgm(const std::string& path, const MatR& values);

}  // namespace mtfnet
