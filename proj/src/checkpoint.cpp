#include "vlp/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "vlp/errors.hpp"

namespace vlp {

namespace {

constexpr const char* kMagic = "vlpckpt";

// Float fields round-trip through max_digits10 so save/load is bitwise.
std::string float_text(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::map<std::string, std::vector<int64_t>> expected_shapes(const ModelConfig& cfg) {
  const ParameterStore<float> reference = init_params<float>(cfg, 0);
  std::map<std::string, std::vector<int64_t>> shapes;
  for (const auto& [name, t] : reference.all()) shapes.emplace(name, t.shape);
  return shapes;
}

}  // namespace

void save_checkpoint(const ParameterStore<float>& params, const CheckpointMeta& meta,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  std::ostringstream header;
  header << kMagic << '\n';
  header << "format_version " << meta.format_version << '\n';
  header << "task " << meta.task << '\n';
  header << "step_count " << meta.step_count << '\n';
  const EncoderConfig& e = meta.model.encoder;
  header << "num_layers " << e.num_layers << '\n';
  header << "hidden_size " << e.hidden_size << '\n';
  header << "num_heads " << e.num_heads << '\n';
  header << "ffn_size " << e.ffn_size << '\n';
  header << "max_seq_len " << e.max_seq_len << '\n';
  header << "dropout_rate " << float_text(e.dropout_rate) << '\n';
  header << "vocab_size " << meta.model.vocab_size << '\n';
  header << "d_vis " << meta.model.d_vis << '\n';
  header << "num_object_classes " << meta.model.num_object_classes << '\n';
  int64_t offset = 0;
  for (const auto& [name, t] : params.all()) {
    header << "param " << name << ' ' << t.rank();
    for (int64_t dim : t.shape) header << ' ' << dim;
    header << ' ' << offset << '\n';
    offset += t.numel() * static_cast<int64_t>(sizeof(float));
  }
  header << "end_header\n";
  out << header.str();
  for (const auto& [name, t] : params.all())
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);

  auto next_line = [&](std::string& line) {
    if (!std::getline(in, line)) throw IoError("checkpoint header truncated: " + path);
  };
  std::string line;
  next_line(line);
  if (line != kMagic) throw IoError(path + " is not a checkpoint file");

  LoadedCheckpoint loaded;
  CheckpointMeta& meta = loaded.meta;
  struct ParamDecl {
    std::string name;
    std::vector<int64_t> shape;
    int64_t offset = 0;
  };
  std::vector<ParamDecl> decls;
  bool saw_end = false;
  while (!saw_end) {
    next_line(line);
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    auto read_int = [&]() {
      int64_t v = 0;
      if (!(ls >> v)) throw IoError("checkpoint header line malformed: '" + line + "'");
      return v;
    };
    if (key == "end_header") {
      saw_end = true;
    } else if (key == "format_version") {
      meta.format_version = static_cast<int>(read_int());
      if (meta.format_version != 1)
        throw IoError("unsupported checkpoint format version " +
                      std::to_string(meta.format_version));
    } else if (key == "task") {
      if (!(ls >> meta.task)) throw IoError("checkpoint header line malformed: '" + line + "'");
    } else if (key == "step_count") {
      meta.step_count = read_int();
    } else if (key == "num_layers") {
      meta.model.encoder.num_layers = static_cast<int>(read_int());
    } else if (key == "hidden_size") {
      meta.model.encoder.hidden_size = static_cast<int>(read_int());
    } else if (key == "num_heads") {
      meta.model.encoder.num_heads = static_cast<int>(read_int());
    } else if (key == "ffn_size") {
      meta.model.encoder.ffn_size = static_cast<int>(read_int());
    } else if (key == "max_seq_len") {
      meta.model.encoder.max_seq_len = static_cast<int>(read_int());
    } else if (key == "dropout_rate") {
      double v = 0;
      if (!(ls >> v)) throw IoError("checkpoint header line malformed: '" + line + "'");
      meta.model.encoder.dropout_rate = static_cast<float>(v);
    } else if (key == "vocab_size") {
      meta.model.vocab_size = static_cast<int>(read_int());
    } else if (key == "d_vis") {
      meta.model.d_vis = static_cast<int>(read_int());
    } else if (key == "num_object_classes") {
      meta.model.num_object_classes = static_cast<int>(read_int());
    } else if (key == "param") {
      ParamDecl d;
      if (!(ls >> d.name)) throw IoError("checkpoint header line malformed: '" + line + "'");
      const int64_t rank = read_int();
      if (rank < 0 || rank > 8) throw IoError("checkpoint declares rank " + std::to_string(rank));
      for (int64_t i = 0; i < rank; ++i) d.shape.push_back(read_int());
      d.offset = read_int();
      decls.push_back(std::move(d));
    } else {
      throw IoError("unknown checkpoint header key '" + key + "' in " + path);
    }
  }

  const auto expected = expected_shapes(meta.model);
  if (decls.size() != expected.size())
    throw IoError("checkpoint declares " + std::to_string(decls.size()) + " parameters but the " +
                  "stored hyperparameters imply " + std::to_string(expected.size()));

  const std::streampos blob_start = in.tellg();
  for (const auto& d : decls) {
    const auto it = expected.find(d.name);
    if (it == expected.end()) throw IoError("checkpoint has unexpected parameter " + d.name);
    Tensor<float> t(d.shape);
    if (it->second != d.shape)
      throw IoError("checkpoint shape mismatch for " + d.name + ": stored " + t.shape_str());
    in.seekg(blob_start + static_cast<std::streamoff>(d.offset));
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw IoError("checkpoint truncated while reading " + d.name + ": " + path);
    loaded.params.insert(d.name, std::move(t));
  }
  loaded.params.set_step_count(meta.step_count);
  return loaded;
}

void require_model_match(const CheckpointMeta& meta, const ModelConfig& expected) {
  const EncoderConfig& a = meta.model.encoder;
  const EncoderConfig& b = expected.encoder;
  const bool same = a.num_layers == b.num_layers && a.hidden_size == b.hidden_size &&
                    a.num_heads == b.num_heads && a.ffn_size == b.ffn_size &&
                    a.max_seq_len == b.max_seq_len &&
                    meta.model.vocab_size == expected.vocab_size &&
                    meta.model.d_vis == expected.d_vis &&
                    meta.model.num_object_classes == expected.num_object_classes;
  if (!same)
    throw ValueError("checkpoint hyperparameters do not match the configured model");
}

}  // namespace vlp
