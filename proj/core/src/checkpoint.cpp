#include "ecnn/checkpoint.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ecnn::ckpt {

namespace {

template <typename V>
void write_raw(std::ostream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_raw(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw IoError("checkpoint: truncated file");
  return v;
}

template <typename T>
constexpr std::uint8_t dtype_tag() {
  return sizeof(T) == 4 ? 0 : 1;
}

struct DirEntry {
  std::string name;
  std::uint8_t dtype = 0;
  Shape shape;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
};

std::string level_blob(int level, const std::string& node_name, ParamRole role) {
  return "L" + std::to_string(level) + "/" + node_name + "/" + role_name(role);
}

std::string record_blob(int step, std::size_t group, std::size_t entry, ParamRole role) {
  return "R" + std::to_string(step) + "/" + std::to_string(group) + "/" + std::to_string(entry) + "/" +
         role_name(role);
}

std::string join_ints(const std::vector<int>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << v[i];
  }
  return os.str();
}

std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(std::stoi(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::stoi(cur));
  return out;
}

std::string field(const std::string& token, const std::string& key) {
  if (token.rfind(key + "=", 0) != 0) throw IoError("checkpoint header: expected '" + key + "=', got '" + token + "'");
  return token.substr(key.size() + 1);
}

template <typename T>
std::string render_header(const elastic::LevelStack<T>& stack) {
  std::ostringstream h;
  const ModelGraph<T>& base = stack.levels.front();
  h << "format ecnn1\n";
  h << "dtype " << (dtype_tag<T>() == 0 ? "f32" : "f64") << "\n";
  h << "arch " << (base.arch_name.empty() ? "custom" : base.arch_name) << "\n";
  h << "input " << base.input_shape[0] << " " << base.input_shape[1] << " " << base.input_shape[2] << "\n";
  h << "classes " << base.num_classes << "\n";
  h << "levels " << stack.levels.size() << "\n";
  h << "current-level " << stack.current_level << "\n";
  for (std::size_t li = 0; li < stack.levels.size(); ++li) {
    const ModelGraph<T>& g = stack.levels[li];
    h << "level " << li << "\n";
    for (const LayerNode& n : g.nodes()) {
      if (n.name.find_first_of(" /\t\n") != std::string::npos)
        throw IoError("node name '" + n.name + "' contains separator characters");
      h << "node " << n.id << " " << kind_name(n.kind) << " " << n.name << " preds=" << join_ints(n.preds)
        << " in=" << n.in_channels << " out=" << n.out_channels << " k=" << n.kernel << " stride=" << n.stride
        << " pad=" << n.pad << " bias=" << (n.has_bias ? 1 : 0) << " factor=" << n.in_factor << "\n";
    }
    h << "output " << g.output() << "\n";
    for (const auto& [slot, map] : g.origin_maps())
      h << "origin " << slot.node << " " << (slot.dim == Dim::Out ? "out" : "in") << " " << join_ints(map) << "\n";
  }
  for (std::size_t ri = 0; ri < stack.records.size(); ++ri) {
    const auto& rec = stack.records[ri];
    h << "record " << rec.step << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "pre-checksum %016llx\n", static_cast<unsigned long long>(rec.pre_checksum));
    h << buf;
    std::snprintf(buf, sizeof(buf), "post-checksum %016llx\n", static_cast<unsigned long long>(rec.post_checksum));
    h << buf;
    for (const auto& rg : rec.groups) {
      h << "group pre-width=" << rg.pre_width << "\n";
      h << "dropped " << join_ints(rg.dropped_original) << "\n";
      h << "kept " << join_ints(rg.kept_original) << "\n";
      for (const auto& re : rg.entries) {
        h << "entry node=" << re.entry.node << " dim=" << depgraph::coupling_dim_name(re.entry.dim)
          << " factor=" << re.entry.factor << " roles=";
        for (std::size_t i = 0; i < re.slices.roles.size(); ++i) {
          if (i) h << ",";
          h << role_name(re.slices.roles[i]);
        }
        h << "\n";
      }
    }
  }
  h << "end\n";
  return h.str();
}

template <typename T>
void enumerate_blobs(const elastic::LevelStack<T>& stack,
                     const std::function<void(const std::string&, const Tensor<T>&)>& fn) {
  for (std::size_t li = 0; li < stack.levels.size(); ++li) {
    const ModelGraph<T>& g = stack.levels[li];
    for (const auto& [key, t] : g.registry())
      fn(level_blob(static_cast<int>(li), g.node(key.node).name, key.role), t);
  }
  for (const auto& rec : stack.records)
    for (std::size_t gi = 0; gi < rec.groups.size(); ++gi)
      for (std::size_t ei = 0; ei < rec.groups[gi].entries.size(); ++ei) {
        const auto& re = rec.groups[gi].entries[ei];
        for (std::size_t si = 0; si < re.slices.roles.size(); ++si)
          fn(record_blob(rec.step, gi, ei, re.slices.roles[si]), re.slices.tensors[si]);
      }
}

}  // namespace

template <typename T>
void save(const std::string& path, const elastic::LevelStack<T>& stack) {
  if (stack.levels.empty()) throw ValueError("cannot save an empty level stack");
  std::string header = render_header(stack);

  std::vector<DirEntry> dir;
  enumerate_blobs<T>(stack, [&](const std::string& name, const Tensor<T>& t) {
    DirEntry e;
    e.name = name;
    e.dtype = dtype_tag<T>();
    e.shape = t.shape;
    e.length = t.data.size() * sizeof(T);
    dir.push_back(std::move(e));
  });
  std::uint64_t dir_bytes = 8;  // count
  for (const DirEntry& e : dir) dir_bytes += 2 + e.name.size() + 1 + 1 + 8 * e.shape.size() + 16;
  std::uint64_t offset = sizeof(kMagic) + 8 + header.size() + dir_bytes;
  for (DirEntry& e : dir) {
    e.offset = offset;
    offset += e.length;
  }

  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp + "'");
    out.write(kMagic, sizeof(kMagic));
    write_raw<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    write_raw<std::uint64_t>(out, dir.size());
    for (const DirEntry& e : dir) {
      write_raw<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      write_raw<std::uint8_t>(out, e.dtype);
      write_raw<std::uint8_t>(out, static_cast<std::uint8_t>(e.shape.size()));
      for (int d : e.shape) write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(d));
      write_raw<std::uint64_t>(out, e.offset);
      write_raw<std::uint64_t>(out, e.length);
    }
    enumerate_blobs<T>(stack, [&](const std::string&, const Tensor<T>& t) {
      out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    });
    if (!out) throw IoError("write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

namespace {

struct RawFile {
  std::string header;
  std::vector<DirEntry> dir;
  std::uint64_t file_size = 0;
};

RawFile read_raw_file(std::istream& in, const std::string& path) {
  in.seekg(0, std::ios::end);
  std::uint64_t fsize = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError("'" + path + "' is not an ECNN1 checkpoint");
  std::uint64_t hsize = read_raw<std::uint64_t>(in);
  if (hsize > fsize) throw IoError("checkpoint header size exceeds file");
  RawFile rf;
  rf.file_size = fsize;
  rf.header.resize(hsize);
  in.read(rf.header.data(), static_cast<std::streamsize>(hsize));
  if (!in) throw IoError("checkpoint: truncated header");
  std::uint64_t count = read_raw<std::uint64_t>(in);
  std::uint64_t prev_end = 0;
  for (std::uint64_t i = 0; i < count; ++i) {
    DirEntry e;
    std::uint16_t nlen = read_raw<std::uint16_t>(in);
    e.name.resize(nlen);
    in.read(e.name.data(), nlen);
    e.dtype = read_raw<std::uint8_t>(in);
    std::uint8_t ndim = read_raw<std::uint8_t>(in);
    for (int d = 0; d < ndim; ++d) e.shape.push_back(static_cast<int>(read_raw<std::uint64_t>(in)));
    e.offset = read_raw<std::uint64_t>(in);
    e.length = read_raw<std::uint64_t>(in);
    if (i > 0 && e.offset < prev_end) throw IoError("checkpoint: overlapping or unordered blobs");
    if (e.offset + e.length > fsize) throw IoError("checkpoint: blob '" + e.name + "' reaches past end of file");
    std::uint64_t want = static_cast<std::uint64_t>(shape_numel(e.shape)) * (e.dtype == 0 ? 4 : 8);
    if (want != e.length) throw IoError("checkpoint: blob '" + e.name + "' length does not match its shape");
    prev_end = e.offset + e.length;
    rf.dir.push_back(std::move(e));
  }
  return rf;
}

class HeaderParser {
 public:
  explicit HeaderParser(const std::string& text) : in_(text) {}

  bool next(std::vector<std::string>& tokens) {
    std::string line;
    while (std::getline(in_, line)) {
      if (line.empty()) continue;
      tokens.clear();
      std::istringstream ls(line);
      std::string tok;
      while (ls >> tok) tokens.push_back(tok);
      if (!tokens.empty()) return true;
    }
    return false;
  }

 private:
  std::istringstream in_;
};

}  // namespace

template <typename T>
elastic::LevelStack<T> load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  RawFile rf = read_raw_file(in, path);

  std::map<std::string, const DirEntry*> blobs;
  for (const DirEntry& e : rf.dir) {
    if (!blobs.emplace(e.name, &e).second) throw IoError("checkpoint: duplicate blob '" + e.name + "'");
  }
  auto read_tensor = [&](const std::string& name) {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw IoError("checkpoint: missing blob '" + name + "'");
    const DirEntry& e = *it->second;
    if (e.dtype != dtype_tag<T>())
      throw IoError("checkpoint: blob '" + name + "' has dtype tag " + std::to_string(e.dtype) +
                    ", expected " + std::to_string(dtype_tag<T>()));
    Tensor<T> t(e.shape);
    in.seekg(static_cast<std::streamoff>(e.offset));
    in.read(reinterpret_cast<char*>(t.data.data()), static_cast<std::streamsize>(e.length));
    if (!in) throw IoError("checkpoint: truncated blob '" + name + "'");
    return t;
  };

  elastic::LevelStack<T> stack;
  std::string arch = "custom";
  Shape input{3, 32, 32};
  int classes = 10;
  std::size_t n_levels = 0;

  HeaderParser hp(rf.header);
  std::vector<std::string> tk;
  int cur_level = -1;
  elastic::PruneRecord<T>* cur_record = nullptr;
  elastic::RecordGroup<T>* cur_group = nullptr;
  while (hp.next(tk)) {
    const std::string& w = tk[0];
    if (w == "format") {
      if (tk.at(1) != "ecnn1") throw IoError("unsupported checkpoint format '" + tk.at(1) + "'");
    } else if (w == "dtype") {
      std::string want = dtype_tag<T>() == 0 ? "f32" : "f64";
      if (tk.at(1) != want) throw IoError("checkpoint dtype is " + tk.at(1) + ", loader expects " + want);
    } else if (w == "arch") {
      arch = tk.at(1);
    } else if (w == "input") {
      input = {std::stoi(tk.at(1)), std::stoi(tk.at(2)), std::stoi(tk.at(3))};
    } else if (w == "classes") {
      classes = std::stoi(tk.at(1));
    } else if (w == "levels") {
      n_levels = static_cast<std::size_t>(std::stoul(tk.at(1)));
    } else if (w == "current-level") {
      stack.current_level = std::stoi(tk.at(1));
    } else if (w == "level") {
      cur_level = std::stoi(tk.at(1));
      stack.levels.emplace_back();
      stack.levels.back().arch_name = arch;
      stack.levels.back().input_shape = input;
      stack.levels.back().num_classes = classes;
      if (static_cast<int>(stack.levels.size()) - 1 != cur_level)
        throw IoError("checkpoint: levels out of order");
    } else if (w == "node") {
      LayerNode n;
      n.kind = kind_from_name(tk.at(2));
      n.name = tk.at(3);
      n.preds = split_ints(field(tk.at(4), "preds"));
      n.in_channels = std::stoi(field(tk.at(5), "in"));
      n.out_channels = std::stoi(field(tk.at(6), "out"));
      n.kernel = std::stoi(field(tk.at(7), "k"));
      n.stride = std::stoi(field(tk.at(8), "stride"));
      n.pad = std::stoi(field(tk.at(9), "pad"));
      n.has_bias = std::stoi(field(tk.at(10), "bias")) != 0;
      n.in_factor = std::stoi(field(tk.at(11), "factor"));
      stack.levels.back().add_node(std::move(n));
    } else if (w == "output") {
      stack.levels.back().set_output(std::stoi(tk.at(1)));
    } else if (w == "origin") {
      Slot s{std::stoi(tk.at(1)), tk.at(2) == "out" ? Dim::Out : Dim::In};
      stack.levels.back().origin_maps()[s] = split_ints(tk.at(3));
    } else if (w == "record") {
      stack.records.emplace_back();
      cur_record = &stack.records.back();
      cur_record->step = std::stoi(tk.at(1));
      cur_group = nullptr;
    } else if (w == "pre-checksum") {
      cur_record->pre_checksum = std::stoull(tk.at(1), nullptr, 16);
    } else if (w == "post-checksum") {
      cur_record->post_checksum = std::stoull(tk.at(1), nullptr, 16);
    } else if (w == "group") {
      cur_record->groups.emplace_back();
      cur_group = &cur_record->groups.back();
      cur_group->pre_width = std::stoi(field(tk.at(1), "pre-width"));
    } else if (w == "dropped") {
      cur_group->dropped_original = tk.size() > 1 ? split_ints(tk.at(1)) : std::vector<int>{};
    } else if (w == "kept") {
      cur_group->kept_original = tk.size() > 1 ? split_ints(tk.at(1)) : std::vector<int>{};
    } else if (w == "entry") {
      elastic::RecordEntry<T> re;
      re.entry.node = std::stoi(field(tk.at(1), "node"));
      re.entry.dim = depgraph::coupling_dim_from_name(field(tk.at(2), "dim"));
      re.entry.factor = std::stoi(field(tk.at(3), "factor"));
      for (const std::string& r : [&] {
             std::vector<std::string> roles;
             std::string list = field(tk.at(4), "roles"), cur;
             for (char c : list) {
               if (c == ',') {
                 roles.push_back(cur);
                 cur.clear();
               } else
                 cur.push_back(c);
             }
             if (!cur.empty()) roles.push_back(cur);
             return roles;
           }())
        re.slices.roles.push_back(role_from_name(r));
      cur_group->entries.push_back(std::move(re));
    } else if (w == "end") {
      break;
    } else {
      throw IoError("checkpoint header: unknown directive '" + w + "'");
    }
  }
  if (stack.levels.size() != n_levels) throw IoError("checkpoint: level count mismatch");
  if (stack.current_level < 0 || stack.current_level >= static_cast<int>(stack.levels.size()))
    throw IoError("checkpoint: current level out of range");

  // Pull tensors for every level and record.
  for (std::size_t li = 0; li < stack.levels.size(); ++li) {
    ModelGraph<T>& g = stack.levels[li];
    for (const LayerNode& n : g.nodes()) {
      std::vector<ParamRole> roles;
      switch (n.kind) {
        case LayerKind::Conv2d:
        case LayerKind::Linear:
          roles.push_back(ParamRole::Weight);
          if (n.has_bias) roles.push_back(ParamRole::Bias);
          break;
        case LayerKind::BatchNorm2d:
          roles = {ParamRole::Gamma, ParamRole::Beta, ParamRole::RunningMean, ParamRole::RunningVar};
          break;
        default:
          break;
      }
      for (ParamRole r : roles) g.set_param(n.id, r, read_tensor(level_blob(static_cast<int>(li), n.name, r)));
    }
    g.validate();
  }
  for (auto& rec : stack.records)
    for (std::size_t gi = 0; gi < rec.groups.size(); ++gi)
      for (std::size_t ei = 0; ei < rec.groups[gi].entries.size(); ++ei) {
        auto& re = rec.groups[gi].entries[ei];
        for (ParamRole r : re.slices.roles)
          re.slices.tensors.push_back(read_tensor(record_blob(rec.step, gi, ei, r)));
      }
  return stack;
}

std::vector<unsigned char> payload_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  RawFile rf = read_raw_file(in, path);
  std::vector<unsigned char> out;
  for (const DirEntry& e : rf.dir) {
    std::size_t at = out.size();
    out.resize(at + e.length);
    in.seekg(static_cast<std::streamoff>(e.offset));
    in.read(reinterpret_cast<char*>(out.data() + at), static_cast<std::streamsize>(e.length));
    if (!in) throw IoError("checkpoint: truncated blob '" + e.name + "'");
  }
  return out;
}

std::string header_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_raw_file(in, path).header;
}

template void save<float>(const std::string&, const elastic::LevelStack<float>&);
template void save<double>(const std::string&, const elastic::LevelStack<double>&);
template elastic::LevelStack<float> load<float>(const std::string&);
template elastic::LevelStack<double> load<double>(const std::string&);

}  // namespace ecnn::ckpt
