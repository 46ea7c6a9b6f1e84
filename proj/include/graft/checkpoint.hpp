#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "graft/errors.hpp"
#include "graft/model.hpp"
#include "json.hpp"

namespace graft {

inline constexpr const char* kCheckpointMagic = "GRAFT-CKPT";
inline constexpr int kCheckpointVersion = 1;

template <typename T>
constexpr const char* dtype_name();
template <>
constexpr const char* dtype_name<float>() {
  return "f32";
}
template <>
constexpr const char* dtype_name<double>() {
  return "f64";
}

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model},   {"heads", c.heads},
          {"layers", c.layers},     {"ffn_mult", c.ffn_mult},
          {"clip", c.clip},         {"dropout", c.dropout},
          {"n_max", c.n_max},       {"vocab_size", c.vocab_size},
          {"num_types", c.num_types}, {"num_relations", c.num_relations}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.heads = j.at("heads").get<int>();
  c.layers = j.at("layers").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.clip = j.at("clip").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.n_max = j.at("n_max").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.num_types = j.at("num_types").get<int>();
  c.num_relations = j.at("num_relations").get<int>();
  return c;
}

// Format: one magic line "GRAFT-CKPT <version> <header_bytes>\n", a JSON
// header (config echo plus the array table), then the raw little-endian
// arrays at the recorded byte offsets. Round trips are bit-exact.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, Parameters<T>& params, long step,
                     const nlohmann::json& run_config,
                     const std::vector<std::pair<std::string, const std::vector<T>*>>& extras = {}) {
  nlohmann::json header;
  header["dtype"] = dtype_name<T>();
  header["step"] = step;
  header["model"] = model_config_to_json(params.config);
  header["run"] = run_config;
  header["arrays"] = nlohmann::json::array();

  std::vector<const std::vector<T>*> buffers;
  std::size_t offset = 0;
  auto add_array = [&](const std::string& name, const Shape& shape, const std::vector<T>* buf) {
    header["arrays"].push_back({{"name", name}, {"shape", shape}, {"offset", offset}});
    buffers.push_back(buf);
    offset += buf->size() * sizeof(T);
  };
  params.visit([&](const std::string& name, Tensor<T>& t) {
    add_array(name, t.shape(), &t.data());
  });
  for (const auto& [name, buf] : extras)
    add_array(name, Shape{static_cast<std::int64_t>(buf->size())}, buf);

  const std::string header_text = header.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot write checkpoint " + path.string());
  f << kCheckpointMagic << ' ' << kCheckpointVersion << ' ' << header_text.size() << '\n';
  f.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto* buf : buffers)
    f.write(reinterpret_cast<const char*>(buf->data()),
            static_cast<std::streamsize>(buf->size() * sizeof(T)));
  if (!f) throw io_error("short write on checkpoint " + path.string());
}

inline nlohmann::json read_checkpoint_header(std::ifstream& f, const std::filesystem::path& path) {
  std::string magic;
  int version = 0;
  std::size_t header_bytes = 0;
  f >> magic >> version >> header_bytes;
  f.get();  // newline
  if (!f || magic != kCheckpointMagic)
    throw data_error(path.string() + " is not a graft checkpoint");
  if (version != kCheckpointVersion)
    throw data_error("unsupported checkpoint version " + std::to_string(version));
  std::string text(header_bytes, '\0');
  f.read(text.data(), static_cast<std::streamsize>(header_bytes));
  if (!f) throw io_error("truncated checkpoint header in " + path.string());
  return nlohmann::json::parse(text);
}

inline std::string checkpoint_dtype(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot read checkpoint " + path.string());
  return read_checkpoint_header(f, path).at("dtype").get<std::string>();
}

template <typename T>
struct LoadedCheckpoint {
  Parameters<T> params;
  long step = 0;
  nlohmann::json run_config;
  std::map<std::string, std::vector<T>> extras;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot read checkpoint " + path.string());
  nlohmann::json header = read_checkpoint_header(f, path);
  if (header.at("dtype").get<std::string>() != dtype_name<T>())
    throw data_error("checkpoint " + path.string() + " holds " +
                     header.at("dtype").get<std::string>() + " arrays, expected " +
                     dtype_name<T>());

  LoadedCheckpoint<T> out;
  out.step = header.at("step").get<long>();
  out.run_config = header.value("run", nlohmann::json::object());
  ModelConfig config = model_config_from_json(header.at("model"));
  out.params = init_parameters<T>(config, 0);

  const std::streampos data_begin = f.tellg();
  std::map<std::string, std::pair<Shape, std::size_t>> table;
  for (const auto& a : header.at("arrays")) {
    table[a.at("name").get<std::string>()] = {a.at("shape").get<Shape>(),
                                              a.at("offset").get<std::size_t>()};
  }
  auto read_array = [&](const std::string& name, std::vector<T>& dst, const Shape& expect,
                        bool check_shape) {
    auto it = table.find(name);
    if (it == table.end()) throw data_error("checkpoint is missing array '" + name + "'");
    if (check_shape && it->second.first != expect)
      throw data_error("checkpoint array '" + name + "' has shape " +
                       shape_str(it->second.first) + ", expected " + shape_str(expect));
    dst.resize(static_cast<std::size_t>(shape_numel(it->second.first)));
    f.seekg(data_begin + static_cast<std::streamoff>(it->second.second));
    f.read(reinterpret_cast<char*>(dst.data()),
           static_cast<std::streamsize>(dst.size() * sizeof(T)));
    if (!f) throw io_error("truncated checkpoint data in " + path.string());
  };

  std::set<std::string> param_names;
  out.params.visit([&](const std::string& name, Tensor<T>& t) {
    param_names.insert(name);
    read_array(name, t.data(), t.shape(), true);
  });
  for (const auto& [name, meta] : table) {
    if (param_names.count(name)) continue;
    read_array(name, out.extras[name], meta.first, false);
  }
  return out;
}

}  // namespace graft
