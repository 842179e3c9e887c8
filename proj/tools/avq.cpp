// avq: command-line front end for data generation, training, fine-tuning,
// evaluation, payload arithmetic, split serving and benchmark sweeps.
//
// Exit codes: 0 ok, 2 config, 3 I/O, 4 protocol/desync, 5 numeric.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "avq/avq.hpp"

using namespace avq;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool csv = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_file, "key=value config file");
  sub->add_option("--set", c.overrides, "override one config key (key=value), repeatable");
  sub->add_option("--seed", c.seed, "seed for model init, data and training");
  sub->add_flag("--csv", c.csv, "machine-readable CSV output");
}

RunConfig resolve(const Common& c) {
  RunConfig rc;
  if (!c.config_file.empty()) rc.load_file(c.config_file);
  if (c.seed) rc.set_seed(*c.seed);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    require(eq != std::string::npos, ErrorKind::config, "--set expects key=value, got '" + kv + "'");
    rc.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  std::cerr << "# resolved config\n";
  for (const auto& [k, v] : rc.resolved()) std::cerr << "#   " << k << " = " << v << '\n';
  return rc;
}

SyntheticDataset load_or_generate(const std::string& shard, const RunConfig& rc) {
  if (!shard.empty()) return decode_dataset(read_file(shard));
  return generate(rc.data);
}

// Up to three decimals, trailing zeros dropped: 0.845, 72.125, 1154.
std::string trim_decimals(double v, int places) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", places, v);
  std::string s = buf;
  if (s.find('.') != std::string::npos) {
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
  }
  return s;
}

void print_table(const Table& t, bool csv) {
  if (csv)
    t.write_csv(std::cout);
  else
    t.write_text(std::cout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"AlignedVQ toy encoder, split runtime and payload arithmetic"};
  app.require_subcommand(1);

  // gen-data
  Common gen_c;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset and write a shard");
  add_common(gen, gen_c);
  gen->add_option("--out", gen_out, "output shard path")->required();

  // train
  Common tr_c;
  std::string tr_data, tr_out;
  auto* tr = app.add_subcommand("train", "train the baseline model (no VQ)");
  add_common(tr, tr_c);
  tr->add_option("--data", tr_data, "dataset shard (generated from config when omitted)");
  tr->add_option("--out", tr_out, "checkpoint path")->required();

  // finetune
  Common ft_c;
  std::string ft_ckpt, ft_data, ft_out;
  auto* ft = app.add_subcommand("finetune", "attach AlignedVQ at the partition and fine-tune");
  add_common(ft, ft_c);
  ft->add_option("--checkpoint", ft_ckpt, "baseline checkpoint")->required();
  ft->add_option("--data", ft_data, "dataset shard");
  ft->add_option("--out", ft_out, "output checkpoint path")->required();

  // eval
  Common ev_c;
  std::string ev_ckpt, ev_data;
  bool ev_split = false;
  auto* ev = app.add_subcommand("eval", "top-1 accuracy on the validation split");
  add_common(ev, ev_c);
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint")->required();
  ev->add_option("--data", ev_data, "dataset shard");
  ev->add_flag("--split", ev_split, "go through the payload bytes (edge encode, cloud decode)");

  // stats-cv
  Common cv_c;
  std::string cv_ckpt, cv_data;
  std::size_t cv_block = 0, cv_images = 64;
  auto* cv = app.add_subcommand("stats-cv", "coefficient of variation of token magnitudes at each tap");
  add_common(cv, cv_c);
  cv->add_option("--checkpoint", cv_ckpt, "checkpoint (random init from config when omitted)");
  cv->add_option("--data", cv_data, "dataset shard");
  cv->add_option("--block", cv_block, "block index");
  cv->add_option("--images", cv_images, "number of validation images");

  // payload-size
  Common ps_c;
  SizeModel ps_m;
  bool ps_raw = false;
  std::vector<std::uint64_t> ps_image;
  auto* ps = app.add_subcommand("payload-size", "payload / raw feature / raw image size in KB (1 KB = 1024 B)");
  add_common(ps, ps_c);
  ps->add_option("--tokens", ps_m.tokens, "tokens N");
  ps->add_option("--bits", ps_m.index_bits, "index bits m");
  ps->add_option("--codebooks", ps_m.stages, "residual stages n");
  ps->add_option("--groups", ps_m.groups, "groups g");
  ps->add_option("--batch", ps_m.batch, "batch B");
  ps->add_option("--channels", ps_m.channels, "channels C (raw sizes)");
  ps->add_option("--precision", ps_m.precision_bits, "bits per raw value (raw sizes)");
  ps->add_flag("--raw", ps_raw, "size of the unquantized features B*N*C*precision");
  ps->add_option("--image", ps_image, "raw 8-bit image H W CH")->expected(3);

  // compress-rate
  Common cr_c;
  SizeModel cr_m;
  auto* cr = app.add_subcommand("compress-rate", "compression rate C*precision / (n*g*m)");
  add_common(cr, cr_c);
  cr->add_option("--channels", cr_m.channels, "channels C");
  cr->add_option("--precision", cr_m.precision_bits, "bits per raw value");
  cr->add_option("--bits", cr_m.index_bits, "index bits m");
  cr->add_option("--codebooks", cr_m.stages, "residual stages n");
  cr->add_option("--groups", cr_m.groups, "groups g");

  // split-serve
  Common ss_c;
  std::string ss_role, ss_ckpt, ss_data, ss_host = "127.0.0.1";
  std::uint16_t ss_port = 7878;
  std::size_t ss_requests = 0, ss_batch = 16, ss_max_conn = 0;
  auto* ss = app.add_subcommand("split-serve", "run one side of the edge/cloud split over TCP");
  add_common(ss, ss_c);
  ss->add_option("--role", ss_role, "edge or cloud")->required()->check(CLI::IsMember({"edge", "cloud"}));
  ss->add_option("--checkpoint", ss_ckpt, "fine-tuned checkpoint (both sides)")->required();
  ss->add_option("--data", ss_data, "dataset shard (edge)");
  ss->add_option("--host", ss_host, "cloud address");
  ss->add_option("--port", ss_port, "cloud port");
  ss->add_option("--requests", ss_requests, "edge: number of requests (0 = whole validation split)");
  ss->add_option("--batch", ss_batch, "edge: images per request");
  ss->add_option("--max-connections", ss_max_conn, "cloud: exit after this many connections (0 = never)");

  // bench
  Common bn_c;
  std::string bn_kind = "bandwidth", bn_ckpt, bn_data;
  double bn_payload = 865.5, bn_edge_ms = 0.0, bn_cloud_ms = 0.0, bn_full_ms = 0.0;
  std::string bn_grid = "1x1,2x1,3x1,1x2,1x4";
  auto* bn = app.add_subcommand("bench", "sweeps: bandwidth | blocks | codebooks");
  add_common(bn, bn_c);
  bn->add_option("--kind", bn_kind, "sweep kind")->check(CLI::IsMember({"bandwidth", "blocks", "codebooks"}));
  bn->add_option("--checkpoint", bn_ckpt, "baseline checkpoint (blocks, codebooks)");
  bn->add_option("--data", bn_data, "dataset shard");
  bn->add_option("--payload-bytes", bn_payload, "bandwidth: AlignedVQ payload bytes");
  bn->add_option("--edge-ms", bn_edge_ms, "bandwidth: edge compute");
  bn->add_option("--cloud-ms", bn_cloud_ms, "bandwidth: cloud compute after the partition");
  bn->add_option("--cloud-full-ms", bn_full_ms, "bandwidth: cloud compute for the whole model");
  bn->add_option("--grid", bn_grid, "codebooks: comma list of n x g");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorKind::config);
  }

  try {
    if (*gen) {
      auto rc = resolve(gen_c);
      auto ds = generate(rc.data);
      write_file(gen_out, encode_dataset(ds));
      std::cout << "wrote " << ds.size() << " samples (" << ds.train_idx.size() << " train, " << ds.val_idx.size()
                << " val) to " << gen_out << '\n';
    } else if (*tr) {
      auto rc = resolve(tr_c);
      auto ds = load_or_generate(tr_data, rc);
      Model m = Model::init(rc.model);
      TrainReport rep;
      try {
        rep = train_baseline(m, ds, rc.train);
      } catch (const TrainingDiverged& e) {
        std::cout << (tr_c.csv ? e.report.csv() : "");
        if (!tr_c.csv) e.report.print_table(std::cout);
        throw;
      }
      if (tr_c.csv)
        std::cout << rep.csv();
      else
        rep.print_table(std::cout);
      save_checkpoint(m, tr_out);
    } else if (*ft) {
      auto rc = resolve(ft_c);
      auto ds = load_or_generate(ft_data, rc);
      Model m = load_checkpoint(ft_ckpt);
      require(!m.vq, ErrorKind::config, "finetune expects a baseline checkpoint without VQ");
      rc.vq.feature_dim = m.cfg.embed_dim;
      auto rep = finetune_alignedvq(m, rc.partition, rc.vq, ds, rc.finetune);
      if (ft_c.csv)
        std::cout << rep.csv();
      else
        rep.print_table(std::cout);
      save_checkpoint(m, ft_out);
    } else if (*ev) {
      auto rc = resolve(ev_c);
      auto ds = load_or_generate(ev_data, rc);
      Model m = load_checkpoint(ev_ckpt);
      const double acc = evaluate_val(m, ds, ev_split ? EvalPath::split : EvalPath::monolithic);
      if (ev_c.csv)
        std::cout << "path,val_accuracy\n" << (ev_split ? "split" : "monolithic") << ',' << acc << '\n';
      else
        std::cout << "val accuracy (" << (ev_split ? "split" : "monolithic") << "): " << acc << '\n';
    } else if (*cv) {
      auto rc = resolve(cv_c);
      rc.data.samples_per_class = std::max<std::size_t>(rc.data.samples_per_class, 1);
      Model m = cv_ckpt.empty() ? Model::init(rc.model) : load_checkpoint(cv_ckpt);
      auto ds = load_or_generate(cv_data, rc);
      std::vector<std::size_t> idx(ds.val_idx.begin(),
                                   ds.val_idx.begin() + static_cast<std::ptrdiff_t>(std::min(cv_images, ds.val_idx.size())));
      auto stats = block_cv_stats(m, ds.batch(idx).first, cv_block);
      Table t{{"block", "location", "cv"}, {}};
      for (auto loc : kTapLocations) t.add(cv_block, std::string(to_string(loc)), stats.at(loc));
      print_table(t, cv_c.csv);
    } else if (*ps) {
      resolve(ps_c);
      if (!ps_image.empty()) {
        const double kb = raw_image_kb(ps_image[0], ps_image[1], ps_image[2]);
        std::cout << (ps_c.csv ? "kind,kb\nimage," + trim_decimals(kb, 3) + "\n"
                               : "raw image: " + trim_decimals(kb, 3) + " KB\n");
      } else if (ps_raw) {
        const double kb = raw_feature_kb(ps_m);
        std::cout << (ps_c.csv ? "kind,kb\nraw," + trim_decimals(kb, 3) + "\n"
                               : "raw features: " + trim_decimals(kb, 3) + " KB\n");
      } else {
        auto s = payload_size(ps_m);
        if (ps_c.csv)
          std::cout << "kind,kb,on_wire_bytes\npayload," << trim_decimals(s.theoretical_kb, 3) << ','
                    << s.on_wire_bytes << '\n';
        else
          std::cout << "payload: " << trim_decimals(s.theoretical_kb, 3) << " KB (" << s.on_wire_bytes
                    << " bytes on the wire with header and padding)\n";
      }
    } else if (*cr) {
      resolve(cr_c);
      auto r = compression_ratio(cr_m);
      if (cr_c.csv)
        std::cout << "rate,numerator,denominator\n" << trim_decimals(r.value(), 2) << ',' << r.num << ',' << r.den
                  << '\n';
      else
        std::cout << "compression rate: " << trim_decimals(r.value(), 2) << "x (" << r.num << "/" << r.den << ")\n";
    } else if (*ss) {
      auto rc = resolve(ss_c);
      Model m = load_checkpoint(ss_ckpt);
      require(m.quantized(), ErrorKind::config, "split-serve needs a fine-tuned checkpoint with AlignedVQ");
      if (ss_role == "cloud") {
        Listener l(ss_host, ss_port);
        std::cerr << "cloud listening on " << ss_host << ':' << l.port() << '\n';
        auto st = serve_cloud(m, l, ss_max_conn);
        std::cout << "connections " << st.connections << ", requests " << st.requests << ", rejected handshakes "
                  << st.rejected_handshakes << '\n';
      } else {
        auto ds = load_or_generate(ss_data, rc);
        EdgeClient client(m, ss_host, ss_port);
        Table t{{"request_id", "images", "payload_bytes", "edge_ms", "round_trip_ms", "correct", "bit_identical"}, {}};
        std::size_t correct_total = 0, seen = 0, requests = 0;
        bool all_identical = true;
        for (std::size_t start = 0; start < ds.val_idx.size(); start += ss_batch) {
          if (ss_requests && requests == ss_requests) break;
          auto chunk = std::span<const std::size_t>(ds.val_idx).subspan(start, std::min(ss_batch, ds.val_idx.size() - start));
          auto [images, labels] = ds.batch(chunk);
          auto res = client.infer(images);
          Tensor local;
          {
            NoGradGuard ng;
            local = encoder_forward(m, images).logits.value();
          }
          const bool same = local.shape() == res.logits.shape() &&
                            std::memcmp(local.data().data(), res.logits.data().data(), local.size() * 4) == 0;
          all_identical = all_identical && same;
          std::size_t correct = 0;
          for (std::size_t i = 0; i < labels.size(); ++i)
            correct += static_cast<int>(argmax_row(res.logits.row(i))) == labels[i];
          t.add(res.request_id, labels.size(), res.payload_bytes, res.edge_compute_s * 1e3, res.round_trip_s * 1e3,
                correct, same ? "yes" : "no");
          correct_total += correct;
          seen += labels.size();
          ++requests;
        }
        print_table(t, ss_c.csv);
        if (!ss_c.csv)
          std::cout << "accuracy " << static_cast<double>(correct_total) / static_cast<double>(std::max<std::size_t>(seen, 1))
                    << ", remote logits " << (all_identical ? "bit-identical to" : "DIFFER from")
                    << " the local quantized forward\n";
        require(all_identical, ErrorKind::protocol, "remote logits differ from the local quantized forward");
      }
    } else if (*bn) {
      auto rc = resolve(bn_c);
      if (bn_kind == "bandwidth") {
        BandwidthSweep s;
        s.payload_bytes = bn_payload;
        s.edge_s = bn_edge_ms / 1e3;
        s.cloud_s = bn_cloud_ms / 1e3;
        s.cloud_full_s = bn_full_ms / 1e3;
        s.link = rc.link;
        print_table(bandwidth_sweep(s), bn_c.csv);
      } else {
        require(!bn_ckpt.empty(), ErrorKind::config, "--kind " + bn_kind + " needs --checkpoint (a baseline)");
        Model base = load_checkpoint(bn_ckpt);
        require(!base.vq, ErrorKind::config, "bench expects a baseline checkpoint without VQ");
        auto ds = load_or_generate(bn_data, rc);
        SweepSetup setup{&base, &ds, rc.finetune, rc.link};
        rc.vq.feature_dim = base.cfg.embed_dim;
        if (bn_kind == "blocks") {
          print_table(block_sweep(setup, rc.partition.location, rc.vq), bn_c.csv);
        } else {
          std::vector<std::pair<std::size_t, std::size_t>> grid;
          std::istringstream in(bn_grid);
          for (std::string tok; std::getline(in, tok, ',');) {
            const auto x = tok.find('x');
            require(x != std::string::npos, ErrorKind::config, "grid entries look like 2x4, got '" + tok + "'");
            grid.emplace_back(std::stoul(tok.substr(0, x)), std::stoul(tok.substr(x + 1)));
          }
          print_table(codebook_sweep(setup, rc.partition, grid, rc.vq.entries), bn_c.csv);
        }
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::config);
  }
  return 0;
}
