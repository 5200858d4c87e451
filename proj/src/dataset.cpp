#include "tsrom/dataset.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <sstream>

#include "tsrom/errors.hpp"
#include "tsrom/fileio.hpp"

namespace tsrom {

static_assert(std::endian::native == std::endian::little, "binary dataset layout assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'T', 'S', 'R', 'O', 'M', 'D', 'S', '1'};
constexpr std::uint32_t kBinaryVersion = 1;
constexpr const char* kManifestFormat = "tsrom-dataset";

template <class T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        if (pos_ + sizeof(T) > bytes_.size()) throw IoError("binary dataset is truncated");
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    void expect_magic() {
        if (bytes_.size() < sizeof(kMagic) || std::memcmp(bytes_.data(), kMagic, sizeof(kMagic)) != 0) {
            throw IoError("binary dataset has a bad magic header");
        }
        pos_ = sizeof(kMagic);
    }

    bool at_end() const { return pos_ == bytes_.size(); }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    return std::string(buf, res.ptr);
}

}  // namespace

std::size_t Dataset::total_points() const {
    std::size_t n = 0;
    for (const auto& s : series) n += s.size();
    return n;
}

void Dataset::validate() const {
    if (state_dim == 0) throw ParameterError("dataset: state dimension must be positive");
    if (series.empty()) throw ParameterError("dataset: no series");
    for (std::size_t k = 0; k < series.size(); ++k) {
        const Series& s = series[k];
        const std::string where = "dataset series " + std::to_string(k);
        if (s.times.empty()) throw ParameterError(where + ": empty");
        if (s.states.rows() != s.times.size() || s.states.cols() != state_dim) {
            throw ParameterError(where + ": states do not match times and state dimension");
        }
        for (std::size_t i = 0; i < s.times.size(); ++i) {
            if (!std::isfinite(s.times[i])) throw ParameterError(where + ": non-finite time stamp");
            if (i > 0 && !(s.times[i] > s.times[i - 1])) throw ParameterError(where + ": times not strictly increasing");
        }
        if (!s.states.all_finite()) throw ParameterError(where + ": non-finite state value");
    }
}

std::string encode_series_binary(const Dataset& d) {
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kBinaryVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(d.state_dim));
    put<std::uint64_t>(out, d.series.size());
    for (const auto& s : d.series) {
        put<std::uint64_t>(out, s.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            put<double>(out, s.times[i]);
            for (std::size_t c = 0; c < d.state_dim; ++c) put<double>(out, s.states(i, c));
        }
    }
    return out;
}

Dataset decode_series_binary(std::string_view bytes) {
    Reader r(bytes);
    r.expect_magic();
    if (r.get<std::uint32_t>() != kBinaryVersion) throw IoError("unsupported binary dataset version");
    Dataset d;
    d.state_dim = r.get<std::uint32_t>();
    const auto n_series = r.get<std::uint64_t>();
    if (d.state_dim == 0) throw IoError("binary dataset declares zero state dimension");
    for (std::uint64_t k = 0; k < n_series; ++k) {
        const auto n = r.get<std::uint64_t>();
        if (n == 0 || n > bytes.size()) throw IoError("binary dataset has an invalid series length");
        Series s;
        s.states = Tensor(n, d.state_dim);
        for (std::uint64_t i = 0; i < n; ++i) {
            s.times.push_back(r.get<double>());
            for (std::size_t c = 0; c < d.state_dim; ++c) s.states(i, c) = r.get<double>();
        }
        d.series.push_back(std::move(s));
    }
    if (!r.at_end()) throw IoError("binary dataset has trailing bytes");
    return d;
}

std::string encode_series_text(const Dataset& d) {
    std::string out = "# tsrom dataset v1\n";
    out += "# state_dim " + std::to_string(d.state_dim) + "\n";
    out += "# n_series " + std::to_string(d.series.size()) + "\n";
    for (std::size_t k = 0; k < d.series.size(); ++k) {
        const Series& s = d.series[k];
        out += "series " + std::to_string(k) + " " + std::to_string(s.size()) + "\n";
        for (std::size_t i = 0; i < s.size(); ++i) {
            out += format_double(s.times[i]);
            for (std::size_t c = 0; c < d.state_dim; ++c) {
                out += ' ';
                out += format_double(s.states(i, c));
            }
            out += '\n';
        }
    }
    return out;
}

Dataset decode_series_text(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    Dataset d;
    std::size_t declared_series = 0;
    auto fail = [](const std::string& msg) { throw IoError("text dataset: " + msg); };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "#") {
            std::string key;
            ls >> key;
            if (key == "state_dim") ls >> d.state_dim;
            if (key == "n_series") ls >> declared_series;
            continue;
        }
        if (word != "series") fail("expected a series header, got '" + line + "'");
        std::size_t index = 0, n = 0;
        if (!(ls >> index >> n) || index != d.series.size() || n == 0) fail("malformed series header");
        if (d.state_dim == 0) fail("missing state_dim header");
        Series s;
        s.states = Tensor(n, d.state_dim);
        for (std::size_t i = 0; i < n; ++i) {
            if (!std::getline(in, line)) fail("truncated series " + std::to_string(index));
            std::istringstream rs(line);
            double t = 0.0;
            if (!(rs >> t)) fail("bad time stamp");
            s.times.push_back(t);
            for (std::size_t c = 0; c < d.state_dim; ++c) {
                if (!(rs >> s.states(i, c))) fail("row has too few values");
            }
        }
        d.series.push_back(std::move(s));
    }
    if (d.series.size() != declared_series) fail("series count does not match header");
    return d;
}

void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
    d.validate();
    std::filesystem::create_directories(dir);
    const std::string bin = encode_series_binary(d);
    const std::string txt = encode_series_text(d);
    nlohmann::json manifest = d.metadata;
    manifest["format"] = kManifestFormat;
    manifest["version"] = 1;
    manifest["state_dim"] = d.state_dim;
    manifest["n_series"] = d.series.size();
    std::vector<std::size_t> lengths;
    for (const auto& s : d.series) lengths.push_back(s.size());
    manifest["points_per_series"] = lengths;
    manifest["files"] = {{"binary", "series.bin"}, {"text", "series.txt"}};
    manifest["data_sha256"] = sha256_hex(bin);
    manifest["text_sha256"] = sha256_hex(txt);
    write_file_atomic(dir / "series.bin", bin);
    write_file_atomic(dir / "series.txt", txt);
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("dataset manifest is not valid JSON: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != kManifestFormat) throw IoError("dataset manifest has the wrong format tag");
    const std::string bin = read_file(dir / "series.bin");
    if (sha256_hex(bin) != manifest.value("data_sha256", "")) {
        throw IoError("dataset " + dir.string() + " is corrupted: series.bin digest does not match the manifest");
    }
    Dataset d = decode_series_binary(bin);
    if (d.state_dim != manifest.value("state_dim", std::size_t{0})) throw IoError("manifest state_dim mismatch");
    for (const char* key : {"format", "version", "files", "data_sha256", "text_sha256", "points_per_series",
                            "state_dim", "n_series"}) {
        manifest.erase(key);
    }
    d.metadata = std::move(manifest);
    try {
        d.validate();
    } catch (const ParameterError& e) {
        throw IoError(std::string("dataset is invalid: ") + e.what());
    }
    return d;
}

}  // namespace tsrom
