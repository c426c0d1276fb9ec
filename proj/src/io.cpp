#include "vdsk/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vdsk {

namespace fs = std::filesystem;

namespace {

void put_u32(std::string& out, uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    explicit Reader(const std::string& b) : buf(b) {}

    void need(size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("truncated file");
    }
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + static_cast<size_t>(i)])) << (8 * i);
        pos += 4;
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

// ---------------------------------------------------------------- clips ----

uint8_t float_to_u8(float v) {
    float x = (v + 1.0f) * 127.5f;
    long r = std::lround(x);
    return static_cast<uint8_t>(std::clamp(r, 0l, 255l));
}

float u8_to_float(uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }

void write_vclip(const fs::path& path, const VideoClip& clip) {
    if (clip.data.rank() != 4 || clip.data.shape[1] != 3)
        throw std::invalid_argument("clip tensor must be T x 3 x H x W");
    std::string out;
    out += "VCLP";
    put_u32(out, 1);
    put_u32(out, static_cast<uint32_t>(clip.data.shape[0]));
    put_u32(out, static_cast<uint32_t>(clip.data.shape[1]));
    put_u32(out, static_cast<uint32_t>(clip.data.shape[2]));
    put_u32(out, static_cast<uint32_t>(clip.data.shape[3]));
    out.push_back(0);  // dtype: u8
    out.reserve(out.size() + static_cast<size_t>(clip.data.size()));
    for (int64_t i = 0; i < clip.data.size(); ++i)
        out.push_back(static_cast<char>(float_to_u8(clip.data[i])));
    write_file_atomic(path, out);
}

VideoClip read_vclip(const fs::path& path) {
    std::string buf = read_file(path);
    Reader r(buf);
    if (r.bytes(4) != "VCLP") throw std::runtime_error("bad clip magic in " + path.string());
    if (r.u32() != 1) throw std::runtime_error("unsupported clip version");
    int64_t t = r.u32(), c = r.u32(), h = r.u32(), w = r.u32();
    if (r.u8() != 0) throw std::runtime_error("unsupported clip dtype");
    VideoClip clip{Tensor::zeros({t, c, h, w})};
    std::string payload = r.bytes(static_cast<size_t>(clip.data.size()));
    for (int64_t i = 0; i < clip.data.size(); ++i)
        clip.data[i] = u8_to_float(static_cast<uint8_t>(payload[static_cast<size_t>(i)]));
    return clip;
}

void write_ppm_frames(const fs::path& dir, const VideoClip& clip) {
    fs::create_directories(dir);
    int64_t h = clip.height(), w = clip.width();
    for (int64_t t = 0; t < clip.frames(); ++t) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d.ppm", static_cast<int>(t));
        std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                for (int64_t c = 0; c < 3; ++c)
                    out.push_back(static_cast<char>(float_to_u8(clip.data.at4(t, c, y, x))));
        write_file_atomic(dir / name, out);
    }
}

// ----------------------------------------------------------- checkpoints ----

const Tensor* LoadedCheckpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void save_checkpoint(const fs::path& path, const std::string& tag,
                     const std::map<std::string, std::string>& metadata,
                     const std::vector<NamedTensorRef>& tensors) {
    if (tag.size() != 4) throw std::invalid_argument("section tag must be 4 bytes");
    std::string meta;
    for (const auto& [k, v] : metadata) meta += k + "=" + v + "\n";

    std::string out;
    out += "VDSK";
    put_u32(out, kCheckpointVersion);
    out += tag;
    put_u32(out, static_cast<uint32_t>(meta.size()));
    out += meta;
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    for (const auto& ref : tensors) {
        put_u32(out, static_cast<uint32_t>(ref.name.size()));
        out += ref.name;
        put_u32(out, static_cast<uint32_t>(ref.tensor->rank()));
        for (int64_t d : ref.tensor->shape) put_u32(out, static_cast<uint32_t>(d));
        out.push_back(0);  // dtype: f32
        const char* raw = reinterpret_cast<const char*>(ref.tensor->data());
        out.append(raw, static_cast<size_t>(ref.tensor->size()) * sizeof(float));
    }
    write_file_atomic(path, out);
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
    std::string buf = read_file(path);
    Reader r(buf);
    if (r.bytes(4) != "VDSK") throw std::runtime_error("bad checkpoint magic in " + path.string());
    if (r.u32() != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version");
    LoadedCheckpoint ck;
    ck.tag = r.bytes(4);
    std::string meta = r.bytes(r.u32());
    std::istringstream ms(meta);
    std::string line;
    while (std::getline(ms, line)) {
        size_t eq = line.find('=');
        if (eq != std::string::npos) ck.metadata[line.substr(0, eq)] = line.substr(eq + 1);
    }
    uint32_t count = r.u32();
    ck.tensors.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.bytes(r.u32());
        uint32_t rank = r.u32();
        std::vector<int64_t> shape(rank);
        for (auto& d : shape) d = r.u32();
        if (r.u8() != 0) throw std::runtime_error("unsupported tensor dtype");
        Tensor t(shape);
        std::string payload = r.bytes(static_cast<size_t>(t.size()) * sizeof(float));
        std::memcpy(t.data(), payload.data(), payload.size());
        ck.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ck;
}

// ---------------------------------------------------------------- config ----

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
    auto it = kv.find(key);
    return it == kv.end() ? fallback : it->second;
}

std::string Config::require_str(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument("config is missing required key '" + key + "'");
    return it->second;
}

int64_t Config::require_int(const std::string& key) const {
    const std::string s = require_str(key);
    try {
        size_t used = 0;
        int64_t v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "' is not an integer: " + s);
    }
}

int64_t Config::get_int(const std::string& key, int64_t fallback) const {
    return has(key) ? require_int(key) : fallback;
}

double Config::get_real(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const std::string s = require_str(key);
    try {
        size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "' is not a number: " + s);
    }
}

uint64_t Config::get_u64(const std::string& key, uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string s = require_str(key);
    try {
        size_t used = 0;
        uint64_t v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "' is not an unsigned integer: " + s);
    }
}

void Config::restrict_keys(const std::vector<std::string>& allowed) const {
    for (const auto& [k, v] : kv) {
        if (k == "config_version") continue;
        if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
            throw std::invalid_argument("unknown config key '" + k + "'");
    }
}

Config parse_config_text(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + " is not 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) + " has an empty key");
        if (cfg.kv.count(key))
            throw std::invalid_argument("duplicate config key '" + key + "'");
        cfg.kv[key] = value;
    }
    if (cfg.get_str("config_version", "") != "1")
        throw std::invalid_argument("config must contain 'config_version = 1'");
    return cfg;
}

Config parse_config(const fs::path& path) { return parse_config_text(read_file(path)); }

// ---------------------------------------------------------------- corpus ----

namespace {

std::string direction_field(const ClipSpec& spec) {
    return spec.direction ? to_string(*spec.direction) : "-";
}

SpriteShape parse_shape(const std::string& s) {
    if (s == "square") return SpriteShape::square;
    if (s == "circle") return SpriteShape::circle;
    if (s == "triangle") return SpriteShape::triangle;
    throw std::runtime_error("bad shape in manifest: " + s);
}

SpriteColor parse_color(const std::string& s) {
    if (s == "red") return SpriteColor::red;
    if (s == "green") return SpriteColor::green;
    if (s == "blue") return SpriteColor::blue;
    if (s == "yellow") return SpriteColor::yellow;
    throw std::runtime_error("bad color in manifest: " + s);
}

std::optional<MoveDirection> parse_direction(const std::string& s) {
    if (s == "-") return std::nullopt;
    if (s == "left") return MoveDirection::left;
    if (s == "right") return MoveDirection::right;
    if (s == "up") return MoveDirection::up;
    if (s == "down") return MoveDirection::down;
    throw std::runtime_error("bad direction in manifest: " + s);
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return out;
}

std::string clip_file_name(int index) {
    char name[32];
    std::snprintf(name, sizeof(name), "clip_%05d.vclip", index);
    return name;
}

}  // namespace

void write_corpus_dir(const fs::path& dir, const std::vector<CorpusItem>& items) {
    fs::create_directories(dir);
    std::string manifest;
    for (int i = 0; i < static_cast<int>(items.size()); ++i) {
        const CorpusItem& item = items[static_cast<size_t>(i)];
        write_vclip(dir / clip_file_name(i), item.clip);
        manifest += std::to_string(i) + "\t" + std::to_string(item.spec.length_frames) + "\t" +
                    to_string(item.spec.shape) + "\t" + to_string(item.spec.color) + "\t" +
                    direction_field(item.spec) + "\t" + std::to_string(item.spec.speed) + "\t" +
                    std::to_string(item.spec.start_x) + "\t" + std::to_string(item.spec.start_y) +
                    "\t" + std::to_string(item.spec.seed) + "\t" + item.caption + "\n";
    }
    write_file_atomic(dir / "manifest.tsv", manifest);
}

std::vector<CorpusItem> load_corpus_dir(const fs::path& dir) {
    std::ifstream in(dir / "manifest.tsv");
    if (!in) throw std::runtime_error("cannot open corpus manifest in " + dir.string());
    std::vector<CorpusItem> items;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto f = split_tabs(line);
        if (f.size() != 10) throw std::runtime_error("bad manifest row: " + line);
        CorpusItem item;
        int index = std::stoi(f[0]);
        item.spec.length_frames = std::stoi(f[1]);
        item.spec.shape = parse_shape(f[2]);
        item.spec.color = parse_color(f[3]);
        item.spec.direction = parse_direction(f[4]);
        item.spec.speed = std::stoi(f[5]);
        item.spec.start_x = std::stoi(f[6]);
        item.spec.start_y = std::stoi(f[7]);
        item.spec.seed = std::stoull(f[8]);
        item.caption = f[9];
        item.clip = read_vclip(dir / clip_file_name(index));
        items.push_back(std::move(item));
    }
    return items;
}

// ------------------------------------------------------------ vocab files ---

void save_vocab(const fs::path& path, const Vocab& vocab) {
    std::string out;
    for (int i = 0; i < vocab.size(); ++i)
        out += vocab.words[static_cast<size_t>(i)] + "\t" + std::to_string(i) + "\n";
    write_file_atomic(path, out);
}

void save_synonyms(const fs::path& path, const SynonymTable& table) {
    std::string out;
    for (const auto& [alias, canonical] : table) out += alias + "\t" + canonical + "\n";
    write_file_atomic(path, out);
}

SynonymTable load_synonyms(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open synonym table " + path.string());
    SynonymTable table;
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        auto f = split_tabs(line);
        if (f.size() != 2) throw std::runtime_error("bad synonym row: " + line);
        table[f[0]] = f[1];
    }
    return table;
}

// ---------------------------------------------------------------- misc ------

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

fs::path next_run_dir(const fs::path& out_dir, const std::string& command) {
    fs::path runs = out_dir / "runs";
    fs::create_directories(runs);
    for (int i = 1; i < 100000; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s-%04d", command.c_str(), i);
        fs::path candidate = runs / name;
        if (!fs::exists(candidate)) {
            fs::create_directories(candidate);
            return candidate;
        }
    }
    throw std::runtime_error("run directory index space exhausted");
}

void write_metric_report(const fs::path& path,
                         const std::vector<std::pair<std::string, double>>& metrics) {
    std::string out;
    char buf[64];
    for (const auto& [k, v] : metrics) {
        std::snprintf(buf, sizeof(buf), "%.6f", v);
        out += k + "\t" + buf + "\n";
    }
    write_file_atomic(path, out);
}

}  // namespace vdsk
