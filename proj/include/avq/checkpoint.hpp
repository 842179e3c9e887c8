#pragma once

// Model checkpoints in the "AVQCKPT1" section container. Every parameter is a
// float section named after its visit() path; "model.config" and friends carry
// the integer metadata as u64 arrays. Codebooks live in a separate AVQCB01
// blob; the checkpoint lists their content hashes and loading refuses a blob
// whose hashes differ.

#include <string>
#include <utility>

#include "avq/codebook.hpp"
#include "avq/container.hpp"
#include "avq/encoder.hpp"

namespace avq {

inline constexpr std::string_view kCheckpointMagic = "AVQCKPT1";

struct CheckpointBlobs {
  Bytes model;
  Bytes codebooks;  // empty when the model has no AlignedVQ module
};

inline CheckpointBlobs encode_checkpoint(const Model& model) {
  Model& m = const_cast<Model&>(model);  // visit() only reads here
  SectionFile f{std::string(kCheckpointMagic)};
  const auto& c = m.cfg;
  f.put_u64s("model.config", std::vector<std::uint64_t>{c.image_size, c.patch_size, c.image_channels, c.embed_dim,
                                                        c.depth, c.heads, c.num_classes,
                                                        static_cast<std::uint64_t>(c.variant), c.seed,
                                                        static_cast<std::uint64_t>(c.embed_norm)});
  f.put_u64s("model.partition",
             std::vector<std::uint64_t>{m.partition.block_index, static_cast<std::uint64_t>(m.partition.location)});
  if (m.adapter) {
    f.put_u64s("adapter.rank", std::vector<std::uint64_t>{m.adapter->rank});
    f.put_floats("adapter.alpha", std::vector<float>{m.adapter->alpha});
  }
  CheckpointBlobs out;
  if (m.vq) {
    const auto& v = m.vq->config;
    f.put_u64s("vq.config", std::vector<std::uint64_t>{v.num_codebooks, v.num_groups, v.entries, v.feature_dim});
    f.put_u64s("vq.codebook_hashes", m.vq->hashes());
    out.codebooks = encode_codebooks(m.vq->codebooks);
  }
  m.visit([&](const std::string& name, Var& v, ParamGroup) { f.put_floats(name, v.value().data()); });
  out.model = f.encode();
  return out;
}

inline Model decode_checkpoint(std::span<const std::uint8_t> model_bytes, std::span<const std::uint8_t> codebook_bytes) {
  auto f = SectionFile::decode(model_bytes, std::string(kCheckpointMagic));
  auto mc = f.u64s("model.config");
  require(mc.size() == 10, ErrorKind::io, "checkpoint: bad model.config section");
  require(mc[7] <= 1 && mc[9] <= 1, ErrorKind::io, "checkpoint: bad model.config value");
  ModelConfig cfg;
  cfg.image_size = mc[0];
  cfg.patch_size = mc[1];
  cfg.image_channels = mc[2];
  cfg.embed_dim = mc[3];
  cfg.depth = mc[4];
  cfg.heads = mc[5];
  cfg.num_classes = mc[6];
  cfg.variant = static_cast<BlockVariant>(mc[7]);
  cfg.seed = mc[8];
  cfg.embed_norm = mc[9] != 0;
  Model m = Model::init(cfg);

  if (f.has("adapter.rank")) {
    auto alpha = f.floats("adapter.alpha");
    require(alpha.size() == 1, ErrorKind::io, "checkpoint: bad adapter.alpha section");
    m.attach_adapter(f.u64s("adapter.rank").at(0), alpha[0], 0);
  }
  auto part = f.u64s("model.partition");
  require(part.size() == 2 && part[1] <= static_cast<std::uint64_t>(TapLocation::ffn), ErrorKind::io,
          "checkpoint: bad model.partition section");
  const PartitionSpec where{part[0], static_cast<TapLocation>(part[1])};
  if (f.has("vq.config")) {
    auto vc = f.u64s("vq.config");
    require(vc.size() == 4, ErrorKind::io, "checkpoint: bad vq.config section");
    VQConfig vcfg{vc[0], vc[1], vc[2], vc[3]};
    m.attach_vq(where, vcfg, 0);
    require(!codebook_bytes.empty(), ErrorKind::io, "checkpoint references codebooks but none were supplied");
    auto books = decode_codebooks(codebook_bytes);
    const auto want = f.u64s("vq.codebook_hashes");
    require(books.size() == want.size(), ErrorKind::io, "codebook file does not match checkpoint (count)");
    for (std::size_t i = 0; i < books.size(); ++i)
      require(books[i].content_hash() == want[i], ErrorKind::io,
              "codebook file does not match checkpoint (hash of entry " + std::to_string(i) + ")");
    check_codebooks(vcfg, books);
    m.vq->codebooks = std::move(books);
  } else {
    m.partition = where;
  }
  m.visit([&](const std::string& name, Var& v, ParamGroup) {
    v.mutable_value() = f.tensor(name, v.shape());
  });
  return m;
}

inline std::string codebook_path_for(const std::string& checkpoint_path) { return checkpoint_path + ".codebooks"; }

inline void save_checkpoint(const Model& m, const std::string& path) {
  auto blobs = encode_checkpoint(m);
  write_file(path, blobs.model);
  if (!blobs.codebooks.empty()) write_file(codebook_path_for(path), blobs.codebooks);
}

inline Model load_checkpoint(const std::string& path) {
  Bytes model = read_file(path);
  auto f = SectionFile::decode(model, std::string(kCheckpointMagic));
  Bytes books;
  if (f.has("vq.config")) books = read_file(codebook_path_for(path));
  return decode_checkpoint(model, books);
}

}  // namespace avq
