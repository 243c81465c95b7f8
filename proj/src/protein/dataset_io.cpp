#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include "latentfuse/protein/protein.hpp"

namespace latentfuse::protein {

namespace {

constexpr char kMagic[4] = {'L', 'F', 'D', 'S'};

class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void f64(double v) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
    void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
    const std::string& bytes() const { return bytes_; }

private:
    std::string bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}

    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw DatasetFormatError("dataset file is truncated");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * i);
        return std::bit_cast<double>(v);
    }
    bool at_end() const { return pos_ == bytes_.size(); }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    const char* peek() const { return bytes_.data() + pos_; }
    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }

private:
    std::string bytes_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void append_double(std::string& line, double v) {
    char buf[32];
    const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
    line.append(buf, static_cast<std::size_t>(n));
}

double parse_double(std::string_view field, std::size_t line_no) {
    std::string s(field);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
        throw DatasetFormatError("bad number '" + s + "' on CSV line " + std::to_string(line_no));
    }
    return v;
}

long parse_int(std::string_view field, std::size_t line_no) {
    long v = 0;
    auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || p != field.data() + field.size()) {
        throw DatasetFormatError("bad integer '" + std::string(field) + "' on CSV line " +
                                 std::to_string(line_no));
    }
    return v;
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace

void save_binary(const ProteinDataset& data, const std::filesystem::path& path) {
    const std::size_t n = data.size();
    ByteWriter w;
    w.raw(kMagic, 4);
    w.u32(kDatasetVersion);
    w.u32(static_cast<std::uint32_t>(n));
    w.u32(static_cast<std::uint32_t>(data.signal_dim()));
    w.u32(static_cast<std::uint32_t>(data.latent_dim()));
    w.u32(static_cast<std::uint32_t>(data.n_modalities()));
    for (auto s : data.splits) w.u8(static_cast<std::uint8_t>(s));
    for (int l : data.labels) w.i32(l);
    for (double v : data.z_true.data()) w.f64(v);
    for (const auto& x : data.signals)
        for (double v : x.data()) w.f64(v);
    write_file(path, w.bytes());
}

ProteinDataset load_binary(const std::filesystem::path& path) {
    ByteReader r(read_file(path));
    r.need(4);
    if (std::memcmp(r.peek(), kMagic, 4) != 0) throw DatasetFormatError("not a dataset file (bad magic)");
    r.skip(4);
    const auto version = r.u32();
    if (version != kDatasetVersion) {
        throw DatasetFormatError("unsupported dataset version " + std::to_string(version));
    }
    const std::size_t n = r.u32();
    const std::size_t n_dim = r.u32();
    const std::size_t d = r.u32();
    const std::size_t n_mod = r.u32();
    const std::size_t expected = n * (1 + 4 + 8 * d + 8 * n_dim * n_mod);
    if (r.remaining() < expected) throw DatasetFormatError("dataset file is truncated");
    if (r.remaining() > expected) throw DatasetFormatError("trailing bytes after dataset payload");

    ProteinDataset data;
    data.splits.resize(n);
    data.labels.resize(n);
    for (auto& s : data.splits) {
        const auto v = r.u8();
        if (v > 1) throw DatasetFormatError("invalid split tag");
        s = static_cast<Split>(v);
    }
    for (int& l : data.labels) l = r.i32();
    data.z_true = Tensor(n, d);
    for (double& v : data.z_true.data()) v = r.f64();
    for (std::size_t m = 0; m < n_mod; ++m) {
        Tensor x(n, n_dim);
        for (double& v : x.data()) v = r.f64();
        data.signals.push_back(std::move(x));
    }
    return data;
}

void save_csv(const ProteinDataset& data, const std::filesystem::path& path) {
    std::string out = "sample_id,split,label";
    for (std::size_t c = 0; c < data.latent_dim(); ++c) out += ",z" + std::to_string(c);
    for (std::size_t m = 0; m < data.n_modalities(); ++m)
        for (std::size_t c = 0; c < data.signal_dim(); ++c)
            out += ",x" + std::to_string(m + 1) + "_" + std::to_string(c);
    out += '\n';
    for (std::size_t i = 0; i < data.size(); ++i) {
        out += std::to_string(i);
        out += data.splits[i] == Split::train ? ",train," : ",test,";
        out += std::to_string(data.labels[i]);
        for (double v : data.z_true.row_span(i)) {
            out += ',';
            append_double(out, v);
        }
        for (const auto& x : data.signals)
            for (double v : x.row_span(i)) {
                out += ',';
                append_double(out, v);
            }
        out += '\n';
    }
    write_file(path, out);
}

ProteinDataset load_csv(const std::filesystem::path& path) {
    std::istringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line)) throw DatasetFormatError("empty CSV dataset");
    const auto header = split_fields(line);
    if (header.size() < 3 || header[0] != "sample_id" || header[1] != "split" || header[2] != "label") {
        throw DatasetFormatError("unexpected CSV header");
    }
    std::size_t d = 0;
    while (3 + d < header.size() && header[3 + d].starts_with("z")) ++d;
    std::size_t n_mod = 0, n_dim = 0;
    for (std::size_t c = 3 + d; c < header.size(); ++c) {
        const auto h = header[c];
        const auto us = h.find('_');
        if (h.empty() || h[0] != 'x' || us == std::string_view::npos) {
            throw DatasetFormatError("unexpected CSV column '" + std::string(h) + "'");
        }
        n_mod = std::max<std::size_t>(n_mod, parse_int(h.substr(1, us - 1), 1));
    }
    if (n_mod > 0) n_dim = (header.size() - 3 - d) / n_mod;
    if (n_mod * n_dim != header.size() - 3 - d) throw DatasetFormatError("ragged signal columns");

    std::vector<Split> splits;
    std::vector<int> labels;
    std::vector<double> z;
    std::vector<std::vector<double>> xs(n_mod);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_fields(line);
        if (f.size() != header.size()) {
            throw DatasetFormatError("CSV line " + std::to_string(line_no) + " has " +
                                     std::to_string(f.size()) + " fields, expected " +
                                     std::to_string(header.size()));
        }
        if (f[1] == "train") splits.push_back(Split::train);
        else if (f[1] == "test") splits.push_back(Split::test);
        else throw DatasetFormatError("bad split on CSV line " + std::to_string(line_no));
        labels.push_back(static_cast<int>(parse_int(f[2], line_no)));
        for (std::size_t c = 0; c < d; ++c) z.push_back(parse_double(f[3 + c], line_no));
        for (std::size_t m = 0; m < n_mod; ++m)
            for (std::size_t c = 0; c < n_dim; ++c)
                xs[m].push_back(parse_double(f[3 + d + m * n_dim + c], line_no));
    }
    ProteinDataset data;
    const std::size_t n = labels.size();
    data.splits = std::move(splits);
    data.labels = std::move(labels);
    data.z_true = Tensor(n, d, std::move(z));
    for (auto& x : xs) data.signals.emplace_back(n, n_dim, std::move(x));
    return data;
}

void save_dataset(const ProteinDataset& data, const std::filesystem::path& path) {
    if (path.extension() == ".csv") save_csv(data, path);
    else save_binary(data, path);
}

ProteinDataset load_dataset(const std::filesystem::path& path) {
    return path.extension() == ".csv" ? load_csv(path) : load_binary(path);
}

}  // namespace latentfuse::protein
