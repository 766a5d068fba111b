#pragma once

#include <filesystem>

#include "streamline/model.hpp"

namespace streamline {

// Weight container: a directory holding
//   manifest.json  {format_version, config, layer_labels, replacements,
//                   tensors: name -> {dtype, shape, byte_offset, byte_len, crc32},
//                   blob_bytes, blob_crc32}
//   weights.bin    raw little-endian float32 payloads, concatenated in
//                  named_tensors() order.
// Tensor names: embedding, layers.{i}.attn.{wq,wk,wv,wo},
// layers.{i}.mlp.{w_gate,w_up,w_down}, layers.{i}.{attn_norm,mlp_norm},
// final_norm, unembed, replacements.{pos}.{param}.
inline constexpr int kContainerFormatVersion = 1;

void save_model(const TransformerModel& model, const std::filesystem::path& dir);
// Throws FormatError (Manifest, BlobMismatch, UnknownTensor, Checksum).
TransformerModel load_model(const std::filesystem::path& dir);

} // namespace streamline
