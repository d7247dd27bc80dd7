#include "panoswin/model.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "panoswin/checkpoint.hpp"

namespace panoswin {

ArchParseError::ArchParseError(const std::string& what, std::size_t position)
    : std::invalid_argument("architecture string, position " + std::to_string(position) + ": " + what),
      position_(position) {}

namespace {

class ArchParser {
 public:
  explicit ArchParser(const std::string& s) : s_(s) {}

  std::vector<Stage> parse() {
    skip_space();
    if (pos_ == s_.size()) throw ArchParseError("empty", pos_);
    std::vector<Stage> stages;
    stages.push_back(stage());
    while (true) {
      skip_space();
      if (pos_ == s_.size()) break;
      expect(',');
      skip_space();
      const std::size_t at = pos_;
      if (word() != "PM") throw ArchParseError("expected PM between stages", at);
      expect(',');
      stages.push_back(stage());
    }
    return stages;
  }

 private:
  Stage stage() {
    skip_space();
    const std::size_t start = pos_;
    expect('[');
    Stage out = items(']');
    expect(']');
    if (out.empty()) throw ArchParseError("empty stage", start);
    if (out.front() == BlockKind::kPA) throw ArchParseError("PA cannot open a stage", start + 1);
    return out;
  }

  Stage items(char close) {
    Stage out;
    while (true) {
      skip_space();
      if (pos_ < s_.size() && s_[pos_] == close) return out;
      if (!out.empty()) {
        expect(',');
        skip_space();
      }
      if (pos_ < s_.size() && s_[pos_] == '(') {
        ++pos_;
        const Stage inner = items(')');
        expect(')');
        expect('*');
        skip_space();
        const std::size_t at = pos_;
        std::size_t n = 0;
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) n = n * 10 + static_cast<std::size_t>(s_[pos_++] - '0');
        if (at == pos_ || n == 0) throw ArchParseError("expected a positive repeat count", at);
        if (inner.empty()) throw ArchParseError("empty group", at);
        for (std::size_t i = 0; i < n; ++i) out.insert(out.end(), inner.begin(), inner.end());
        continue;
      }
      const std::size_t at = pos_;
      const std::string w = word();
      if (w == "W") out.push_back(BlockKind::kW);
      else if (w == "SW") out.push_back(BlockKind::kSW);
      else if (w == "PSW") out.push_back(BlockKind::kPSW);
      else if (w == "PA") out.push_back(BlockKind::kPA);
      else if (w.empty()) throw ArchParseError(pos_ < s_.size() ? std::string("unexpected '") + s_[pos_] + "'" : "unexpected end", at);
      else throw ArchParseError("unknown token '" + w + "'", at);
    }
  }

  std::string word() {
    skip_space();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && std::isalpha(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    return s_.substr(start, pos_ - start);
  }

  void expect(char c) {
    skip_space();
    if (pos_ >= s_.size()) throw ArchParseError(std::string("expected '") + c + "', got end", pos_);
    if (s_[pos_] != c) throw ArchParseError(std::string("expected '") + c + "', got '" + s_[pos_] + "'", pos_);
    ++pos_;
  }

  void skip_space() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  const std::string& s_;
  std::size_t pos_ = 0;
};

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

const char* fold_name(PswFold f) { return f == PswFold::kVerticalFlip ? "vflip" : "rot180"; }

}  // namespace

std::vector<Stage> parse_arch(const std::string& s) { return ArchParser(s).parse(); }

std::string format_arch(const std::vector<Stage>& stages) {
  std::string out;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (s > 0) out += ", PM, ";
    out += '[';
    for (std::size_t b = 0; b < stages[s].size(); ++b) {
      if (b > 0) out += ", ";
      out += block_kind_name(stages[s][b]);
    }
    out += ']';
  }
  return out;
}

std::size_t heads_for_dim(std::size_t dim) { return dim % 4 == 0 ? dim / 4 : 1; }

std::string ModelConfig::to_text() const {
  std::ostringstream o;
  o.precision(17);
  o << "arch=" << arch() << '\n'
    << "embed_dim=" << embed_dim << '\n'
    << "num_classes=" << num_classes << '\n'
    << "in_channels=" << in_channels << '\n'
    << "input_h=" << input_h << '\n'
    << "input_w=" << input_w << '\n'
    << "patch_stride=" << patch_stride << '\n'
    << "window=" << window << '\n'
    << "mode=" << mode_name(mode) << '\n'
    << "psw_fold=" << fold_name(block.psw_fold) << '\n'
    << "swin_mode_uses_sw=" << block.swin_mode_uses_sw << '\n'
    << "pa_value_from_key=" << block.pa_value_from_key << '\n'
    << "mlp_ratio=" << block.mlp_ratio << '\n'
    << "seed=" << seed << '\n';
  return o.str();
}

ModelConfig config_from_text(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  bool have_arch = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("model config line without '=': " + line);
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    auto num = [&] { return static_cast<std::size_t>(std::stoull(value)); };
    if (key == "arch") cfg.stages = parse_arch(value), have_arch = true;
    else if (key == "embed_dim") cfg.embed_dim = num();
    else if (key == "num_classes") cfg.num_classes = num();
    else if (key == "in_channels") cfg.in_channels = num();
    else if (key == "input_h") cfg.input_h = num();
    else if (key == "input_w") cfg.input_w = num();
    else if (key == "patch_stride") cfg.patch_stride = num();
    else if (key == "window") cfg.window = num();
    else if (key == "mode") cfg.mode = parse_mode(value);
    else if (key == "psw_fold") {
      if (value == "vflip") cfg.block.psw_fold = PswFold::kVerticalFlip;
      else if (value == "rot180") cfg.block.psw_fold = PswFold::kRotate180;
      else throw std::invalid_argument("unknown psw_fold '" + value + "' (expected vflip or rot180)");
    } else if (key == "swin_mode_uses_sw") cfg.block.swin_mode_uses_sw = value == "1";
    else if (key == "pa_value_from_key") cfg.block.pa_value_from_key = value == "1";
    else if (key == "mlp_ratio") cfg.block.mlp_ratio = std::stod(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else throw std::invalid_argument("unknown model config key '" + key + "'");
  }
  if (!have_arch) throw std::invalid_argument("model config has no arch");
  return cfg;
}

ModelConfig make_config(const std::string& arch, std::size_t embed_dim) {
  ModelConfig cfg;
  cfg.stages = parse_arch(arch);
  cfg.embed_dim = embed_dim;
  return cfg;
}

std::vector<std::string> preset_names() {
  return {"panoswint8", "panoswint12", "swint13", "panoswint92", "swint", "panoswint"};
}

ModelConfig preset_config(const std::string& alias) {
  const std::string a = lower(alias);
  const std::string deep = "[W, PSW, PA], PM, [W, PSW, PA], PM, [(W, PSW)*2, W, PA], PM, [W, PSW]";
  ModelConfig cfg;
  if (a == "panoswint8") {
    cfg = make_config("[W, PSW, PA], PM, [W, PSW, PA], PM, [W, PSW, PA], PM, [W, PSW]", 8);
    // Four stages on 48x96 need a 24x48 first grid.
    cfg.patch_stride = 2;
  } else if (a == "panoswint12") {
    cfg = make_config("[W, PSW, PA], PM, [W, PSW]", 12);
  } else if (a == "swint13") {
    cfg = make_config("[W, PSW, W], PM, [W, PSW]", 13);
  } else if (a == "panoswint92" || a == "panoswint" || a == "swint") {
    cfg = a == "swint" ? make_config("[W, SW], PM, [W, SW], PM, [(W, SW)*3], PM, [W, SW]", 96)
                       : make_config(deep, a == "panoswint92" ? 92 : 96);
    cfg.input_h = 224;
    cfg.input_w = 448;
    cfg.window = 7;
    cfg.num_classes = 1000;
    cfg.in_channels = 3;
  } else {
    std::string names;
    for (const auto& n : preset_names()) names += (names.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown architecture alias '" + alias + "' (known: " + names + ")");
  }
  return cfg;
}

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg.stages.empty()) throw std::invalid_argument("model needs at least one stage");
  if (cfg.input_h % cfg.patch_stride != 0 || cfg.input_w % cfg.patch_stride != 0) {
    throw std::invalid_argument("input " + std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w) +
                                " not divisible by patch stride " + std::to_string(cfg.patch_stride));
  }
  Initializer init(cfg.seed);
  embed_ = PatchEmbed::make(init, cfg.in_channels, cfg.embed_dim, cfg.patch_stride);
  abs_pos_ = AbsPosEncoder::make(init, cfg.embed_dim);
  std::size_t rows = cfg.input_h / cfg.patch_stride, cols = cfg.input_w / cfg.patch_stride, dim = cfg.embed_dim;
  for (std::size_t s = 0; s < cfg.stages.size(); ++s) {
    if (s > 0) {
      if (rows % 2 != 0 || cols % 2 != 0) {
        throw std::invalid_argument("stage " + std::to_string(s) + ": cannot merge a " + std::to_string(rows) + "x" +
                                    std::to_string(cols) + " grid");
      }
      merges_.push_back(PatchMerge::make(init, dim));
      rows /= 2;
      cols /= 2;
      dim *= 2;
    }
    const PatchGrid grid{rows, cols, std::min(cfg.window, rows)};
    grids_.push_back(grid);
    dims_.push_back(dim);
    std::vector<TransformerBlock> stage;
    for (BlockKind k : cfg.stages[s]) {
      try {
        stage.emplace_back(k, grid, dim, heads_for_dim(dim), init, cfg.block);
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument("stage " + std::to_string(s) + " " + block_kind_name(k) + " block: " + e.what());
      }
    }
    blocks_.push_back(std::move(stage));
  }
  final_norm_ = LayerNorm::make(init, dim);
  head_ = Linear::make(init, dim, cfg.num_classes);
}

Tensor Model::features(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != cfg_.in_channels || images.dim(2) != cfg_.input_h || images.dim(3) != cfg_.input_w) {
    throw ShapeError("model expects images [B, " + std::to_string(cfg_.in_channels) + ", " + std::to_string(cfg_.input_h) +
                     ", " + std::to_string(cfg_.input_w) + "], got " + shape_str(images.shape()));
  }
  Tensor x = embed_(images);
  if (cfg_.mode == Mode::kPano) x = ops::add_tiled(x, abs_pos_embed(grids_[0], abs_pos_, cfg_.mode));
  for (std::size_t s = 0; s < blocks_.size(); ++s) {
    if (s > 0) x = merges_[s - 1](x, grids_[s - 1]);
    for (const TransformerBlock& b : blocks_[s]) x = b.forward(x, cfg_.mode);
  }
  return final_norm_(x);
}

Tensor Model::classify(const Tensor& features) const { return head_(ops::mean_axis(features, 1)); }

Tensor Model::forward(const Tensor& images) const { return classify(features(images)); }

std::vector<Param> Model::parameters() const {
  std::vector<Param> out;
  embed_.collect("embed", out);
  abs_pos_.collect("abs_pos", out);
  for (std::size_t s = 0; s < blocks_.size(); ++s) {
    if (s > 0) merges_[s - 1].collect("merge" + std::to_string(s), out);
    for (std::size_t b = 0; b < blocks_[s].size(); ++b) {
      blocks_[s][b].collect("stage" + std::to_string(s) + ".block" + std::to_string(b), out);
    }
  }
  final_norm_.collect("norm", out);
  head_.collect("head", out);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Param& p : parameters()) n += p.tensor.size();
  return n;
}

void Model::save(const std::filesystem::path& path, const std::map<std::string, std::string>& meta) const {
  std::vector<Param> entries = parameters();
  entries.push_back(text_entry("meta/config", cfg_.to_text()));
  entries.push_back(text_entry("meta/arch", cfg_.arch()));
  for (const auto& [k, v] : meta) entries.push_back(text_entry("meta/" + k, v));
  save_tensors(path, entries);
}

Model Model::load(const std::filesystem::path& path) {
  const std::vector<Param> loaded = load_tensors(path);
  const auto text = find_text(loaded, "meta/config");
  if (!text) throw std::runtime_error(path.string() + ": checkpoint has no meta/config entry");
  Model model(config_from_text(*text));
  std::vector<Param> params = model.parameters();
  assign_by_name(params, loaded);
  return model;
}

void switch_mode(Model& model, Mode mode) { model.set_mode(mode); }

}  // namespace panoswin
