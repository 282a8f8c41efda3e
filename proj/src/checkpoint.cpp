#include "semfsl/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "semfsl/errors.hpp"
#include "semfsl/report.hpp"

namespace semfsl {

namespace {

constexpr std::string_view kHeader = "semfsl-checkpoint 1";

template <typename T>
T parse_number(std::string_view text, std::size_t line_no) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError("bad number '" + std::string(text) + "'", line_no);
  }
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  const ModelConfig& c = ck.params.config;
  out << kHeader << '\n';
  out << "variant=" << variant_name(ck.variant) << '\n';
  out << "seed=" << ck.seed << '\n';
  out << "feature_dim=" << c.feature_dim << '\n';
  out << "embedding_dim=" << c.embedding_dim << '\n';
  out << "attention_dim=" << c.attention_dim << '\n';
  out << "feature_attention_hidden=" << c.feature_attention_hidden << '\n';
  out << "prior_layers=" << c.prior_layers << '\n';
  out << "prior_hidden=" << c.prior_hidden << '\n';
  out << "prior_dropout=" << format_double(c.prior_dropout) << '\n';
  out << "visual_dropout=" << format_double(c.visual_dropout) << '\n';
  out << "semantic_dropout=" << format_double(c.semantic_dropout) << '\n';
  out << "alpha=" << format_double(c.alpha) << '\n';
  out << "dist_scale=" << format_double(c.dist_scale) << '\n';
  out << "scale_prior_by_attention=" << (c.scale_prior_by_attention ? 1 : 0) << '\n';
  for (const Parameter* p : ck.params.all()) {
    out << "param " << p->name << ' ' << p->value.rows() << ' ' << p->value.cols() << '\n';
    for (Index r = 0; r < p->value.rows(); ++r) {
      for (Index k = 0; k < p->value.cols(); ++k) {
        if (k > 0) out << ' ';
        out << format_double(p->value(r, k));
      }
      out << '\n';
    }
  }
  out << "end\n";
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line)) {
      throw FormatError(std::string("checkpoint ends early, expected ") + what);
    }
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };

  next_line("header");
  if (line != kHeader) throw FormatError("not a semfsl checkpoint (bad header)");

  std::map<std::string, std::string> fields;
  Checkpoint ck;
  for (;;) {
    next_line("config or parameters");
    if (line.rfind("param ", 0) == 0 || line == "end") break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", line_no);
    fields[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto field = [&](const char* key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw FormatError(std::string("checkpoint lacks '") + key + "'");
    return it->second;
  };
  ModelConfig cfg;
  ck.variant = parse_variant(field("variant"));
  ck.seed = parse_number<std::uint64_t>(field("seed"), line_no);
  cfg.feature_dim = parse_number<Index>(field("feature_dim"), line_no);
  cfg.embedding_dim = parse_number<Index>(field("embedding_dim"), line_no);
  cfg.attention_dim = parse_number<Index>(field("attention_dim"), line_no);
  cfg.feature_attention_hidden = parse_number<Index>(field("feature_attention_hidden"), line_no);
  cfg.prior_layers = parse_number<int>(field("prior_layers"), line_no);
  cfg.prior_hidden = parse_number<Index>(field("prior_hidden"), line_no);
  cfg.prior_dropout = parse_number<double>(field("prior_dropout"), line_no);
  cfg.visual_dropout = parse_number<double>(field("visual_dropout"), line_no);
  cfg.semantic_dropout = parse_number<double>(field("semantic_dropout"), line_no);
  cfg.alpha = parse_number<double>(field("alpha"), line_no);
  cfg.dist_scale = parse_number<double>(field("dist_scale"), line_no);
  cfg.scale_prior_by_attention = field("scale_prior_by_attention") == "1";
  try {
    ck.params = HeadParams::init(cfg, ck.seed);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }

  std::size_t loaded = 0;
  while (line != "end") {
    std::istringstream head(line);
    std::string tag, name;
    Index rows = 0, cols = 0;
    if (!(head >> tag >> name >> rows >> cols) || tag != "param") {
      throw ParseError("expected 'param <name> <rows> <cols>'", line_no);
    }
    Parameter* p = ck.params.find(name);
    if (p == nullptr) throw ParseError("unknown parameter '" + name + "'", line_no);
    if (p->value.rows() != rows || p->value.cols() != cols) {
      throw ParseError("parameter '" + name + "' has shape " + shape_string(rows, cols) +
                           ", config implies " + shape_string(p->value),
                       line_no);
    }
    for (Index r = 0; r < rows; ++r) {
      next_line("parameter values");
      std::istringstream values(line);
      std::string tok;
      for (Index k = 0; k < cols; ++k) {
        if (!(values >> tok)) throw ParseError("too few values for '" + name + "'", line_no);
        p->value(r, k) = parse_number<double>(tok, line_no);
      }
      if (values >> tok) throw ParseError("too many values for '" + name + "'", line_no);
    }
    ++loaded;
    next_line("parameter or end");
  }
  if (loaded != ck.params.all().size()) {
    throw FormatError("checkpoint holds " + std::to_string(loaded) + " parameters, expected " +
                      std::to_string(ck.params.all().size()));
  }
  return ck;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, checkpoint);
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace semfsl
