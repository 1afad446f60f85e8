#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssnn/data.hpp"

namespace ssnn {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'N', 'N', 'D', 'A', 'T', '1'};

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void atomic_write(const std::string& path, const std::string& contents) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw std::runtime_error("short write to '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

class ByteReader {
public:
    ByteReader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool exhausted() const { return pos_ == data_.size(); }

private:
    void need(size_t n) {
        if (pos_ + n > data_.size())
            throw parse_error("'" + path_ + "': truncated at offset " + std::to_string(pos_));
    }
    std::string data_;
    std::string path_;
    size_t pos_ = 0;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_cell(const std::string& cell, const std::string& path, int row, int col) {
    const char* begin = cell.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0' || !std::isfinite(v))
        throw parse_error("'" + path + "': non-numeric cell '" + cell + "' at row " + std::to_string(row) +
                          ", column " + std::to_string(col + 1));
    return v;
}

long parse_int_cell(const std::string& cell, const std::string& path, int row, int col) {
    const char* begin = cell.c_str();
    char* end = nullptr;
    long v = std::strtol(begin, &end, 10);
    if (end == begin || *end != '\0')
        throw parse_error("'" + path + "': non-integer cell '" + cell + "' at row " + std::to_string(row) +
                          ", column " + std::to_string(col + 1));
    return v;
}

struct RawRows {
    std::string id;
    std::vector<std::vector<double>> rows;
};

Dataset assemble(std::vector<RawRows> groups, int m, const std::string& path) {
    Dataset out;
    for (RawRows& g : groups) {
        Sequence seq;
        seq.id = g.id;
        int T = static_cast<int>(g.rows.size());
        seq.x = Tensor(Shape{T, m});
        for (int t = 0; t < T; ++t)
            for (int j = 0; j < m; ++j) seq.x.at(t, j) = g.rows[static_cast<size_t>(t)][static_cast<size_t>(j)];
        try {
            seq.validate();
        } catch (const contract_error& e) {
            throw schema_error("'" + path + "': " + e.what());
        }
        out.sequences.push_back(std::move(seq));
    }
    return out;
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::string& path, FileFormat format) {
    int m = dataset.obs_dim();
    for (const Sequence& s : dataset.sequences)
        if (s.obs_dim() != m)
            throw schema_error("write_dataset: inconsistent observation dims " + std::to_string(m) + " vs " +
                               std::to_string(s.obs_dim()));
    std::string out;
    if (format == FileFormat::Csv) {
        out = "seq_id,t";
        for (int j = 0; j < m; ++j) out += ",x" + std::to_string(j);
        out += "\n";
        for (const Sequence& s : dataset.sequences)
            for (int t = 0; t < s.length(); ++t) {
                out += s.id + "," + std::to_string(t);
                for (int j = 0; j < m; ++j) out += "," + fmt_double(s.x.at(t, j));
                out += "\n";
            }
    } else {
        out.append(kMagic, 8);
        put_u32(out, static_cast<std::uint32_t>(dataset.sequences.size()));
        for (const Sequence& s : dataset.sequences) {
            put_u32(out, static_cast<std::uint32_t>(s.id.size()));
            out += s.id;
            put_u32(out, static_cast<std::uint32_t>(s.length()));
            put_u32(out, static_cast<std::uint32_t>(m));
            for (int t = 0; t < s.length(); ++t)
                for (int j = 0; j < m; ++j) put_f32(out, static_cast<float>(s.x.at(t, j)));
        }
    }
    atomic_write(path, out);
}

Dataset read_dataset(const std::string& path, FileFormat format) {
    std::string raw = slurp(path);
    if (raw.empty()) throw schema_error("'" + path + "': empty file");

    if (format == FileFormat::RawF32) {
        ByteReader reader(std::move(raw), path);
        if (reader.bytes(8) != std::string(kMagic, 8))
            throw parse_error("'" + path + "': bad magic, expected SSNNDAT1");
        std::uint32_t count = reader.u32();
        Dataset out;
        int m = -1;
        for (std::uint32_t i = 0; i < count; ++i) {
            Sequence seq;
            std::uint32_t id_len = reader.u32();
            seq.id = reader.bytes(id_len);
            std::uint32_t T = reader.u32();
            std::uint32_t sm = reader.u32();
            if (T < 1 || sm < 1)
                throw schema_error("'" + path + "': sequence '" + seq.id + "' has empty dims");
            if (m < 0)
                m = static_cast<int>(sm);
            else if (m != static_cast<int>(sm))
                throw schema_error("'" + path + "': inconsistent observation dim " + std::to_string(sm) +
                                   " vs " + std::to_string(m));
            seq.x = Tensor(Shape{static_cast<int>(T), m});
            for (std::int64_t j = 0; j < seq.x.numel(); ++j) seq.x[j] = static_cast<double>(reader.f32());
            try {
                seq.validate();
            } catch (const contract_error& e) {
                throw schema_error("'" + path + "': " + e.what());
            }
            out.sequences.push_back(std::move(seq));
        }
        if (!reader.exhausted()) throw parse_error("'" + path + "': trailing bytes after last sequence");
        return out;
    }

    std::istringstream in(raw);
    std::string line;
    if (!std::getline(in, line)) throw schema_error("'" + path + "': empty file");
    std::vector<std::string> header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "seq_id" || header[1] != "t")
        throw schema_error("'" + path + "': expected header seq_id,t,x0,...");
    int m = static_cast<int>(header.size()) - 2;
    for (int j = 0; j < m; ++j)
        if (header[static_cast<size_t>(j) + 2] != "x" + std::to_string(j))
            throw schema_error("'" + path + "': bad header column '" + header[static_cast<size_t>(j) + 2] + "'");

    std::vector<RawRows> groups;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::vector<std::string> cells = split_csv_line(line);
        if (static_cast<int>(cells.size()) != m + 2)
            throw parse_error("'" + path + "': row " + std::to_string(row) + " has " +
                              std::to_string(cells.size()) + " cells, expected " + std::to_string(m + 2));
        if (groups.empty() || groups.back().id != cells[0]) groups.push_back(RawRows{cells[0], {}});
        long t = parse_int_cell(cells[1], path, row, 1);
        if (t != static_cast<long>(groups.back().rows.size()))
            throw schema_error("'" + path + "': row " + std::to_string(row) + ": time index " +
                               std::to_string(t) + " breaks the 0..T-1 order for '" + cells[0] + "'");
        std::vector<double> vals(static_cast<size_t>(m));
        for (int j = 0; j < m; ++j) vals[static_cast<size_t>(j)] = parse_cell(cells[static_cast<size_t>(j) + 2], path, row, j + 2);
        groups.back().rows.push_back(std::move(vals));
    }
    if (groups.empty()) throw schema_error("'" + path + "': no data rows");
    return assemble(std::move(groups), m, path);
}

void write_truth_sidecar(const Dataset& dataset, const std::string& path) {
    std::string out = "seq_id,t,z,d\n";
    for (const Sequence& s : dataset.sequences) {
        if (!s.truth) continue;
        for (int t = 0; t < s.length(); ++t)
            out += s.id + "," + std::to_string(t) + "," + std::to_string(s.truth->z[static_cast<size_t>(t)]) +
                   "," + std::to_string(s.truth->d[static_cast<size_t>(t)]) + "\n";
    }
    atomic_write(path, out);
}

void read_truth_sidecar(Dataset& dataset, const std::string& path) {
    std::string raw = slurp(path);
    std::istringstream in(raw);
    std::string line;
    if (!std::getline(in, line)) throw schema_error("'" + path + "': empty file");
    if (split_csv_line(line) != std::vector<std::string>{"seq_id", "t", "z", "d"})
        throw schema_error("'" + path + "': expected header seq_id,t,z,d");

    std::unordered_map<std::string, LatentPath> paths;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::vector<std::string> cells = split_csv_line(line);
        if (cells.size() != 4)
            throw parse_error("'" + path + "': row " + std::to_string(row) + " has " +
                              std::to_string(cells.size()) + " cells, expected 4");
        LatentPath& p = paths[cells[0]];
        long t = parse_int_cell(cells[1], path, row, 1);
        if (t != static_cast<long>(p.z.size()))
            throw schema_error("'" + path + "': row " + std::to_string(row) + ": time index out of order");
        p.z.push_back(static_cast<int>(parse_int_cell(cells[2], path, row, 2)));
        p.d.push_back(static_cast<int>(parse_int_cell(cells[3], path, row, 3)));
    }
    for (Sequence& s : dataset.sequences) {
        auto it = paths.find(s.id);
        if (it == paths.end()) continue;
        if (static_cast<int>(it->second.z.size()) != s.length())
            throw schema_error("'" + path + "': truth for '" + s.id + "' has length " +
                               std::to_string(it->second.z.size()) + ", sequence has " +
                               std::to_string(s.length()));
        s.truth = it->second;
    }
}

NormStats compute_norm_stats(const Dataset& dataset) {
    if (dataset.empty()) throw contract_error("compute_norm_stats: empty dataset");
    int m = dataset.obs_dim();
    NormStats stats;
    stats.mean.assign(static_cast<size_t>(m), 0.0);
    stats.std.assign(static_cast<size_t>(m), 0.0);
    std::int64_t n = 0;
    for (const Sequence& s : dataset.sequences) {
        for (int t = 0; t < s.length(); ++t)
            for (int j = 0; j < m; ++j) stats.mean[static_cast<size_t>(j)] += s.x.at(t, j);
        n += s.length();
    }
    for (int j = 0; j < m; ++j) stats.mean[static_cast<size_t>(j)] /= static_cast<double>(n);
    for (const Sequence& s : dataset.sequences)
        for (int t = 0; t < s.length(); ++t)
            for (int j = 0; j < m; ++j) {
                double d = s.x.at(t, j) - stats.mean[static_cast<size_t>(j)];
                stats.std[static_cast<size_t>(j)] += d * d;
            }
    for (int j = 0; j < m; ++j) stats.std[static_cast<size_t>(j)] = std::sqrt(stats.std[static_cast<size_t>(j)] / static_cast<double>(n));
    return stats;
}

void apply_normalization(Dataset& dataset, const NormStats& stats) {
    int m = dataset.obs_dim();
    if (static_cast<int>(stats.mean.size()) != m || static_cast<int>(stats.std.size()) != m)
        throw contract_error("apply_normalization: stats dim mismatch");
    for (Sequence& s : dataset.sequences)
        for (int t = 0; t < s.length(); ++t)
            for (int j = 0; j < m; ++j) {
                double sd = stats.std[static_cast<size_t>(j)];
                s.x.at(t, j) = (s.x.at(t, j) - stats.mean[static_cast<size_t>(j)]) / (sd > 1e-12 ? sd : 1.0);
            }
    dataset.stats = stats;
}

Dataset chunk_sequences(const Dataset& dataset, int chunk_len) {
    if (chunk_len < 1) throw contract_error("chunk_sequences: chunk_len must be >= 1");
    Dataset out;
    out.stats = dataset.stats;
    for (const Sequence& s : dataset.sequences) {
        for (int start = 0; start < s.length(); start += chunk_len) {
            int len = std::min(chunk_len, s.length() - start);
            Sequence chunk;
            chunk.id = s.id + "@" + std::to_string(start);
            chunk.parent_id = s.id;
            chunk.offset = start;
            chunk.x = Tensor(Shape{len, s.obs_dim()});
            for (int t = 0; t < len; ++t)
                for (int j = 0; j < s.obs_dim(); ++j) chunk.x.at(t, j) = s.x.at(start + t, j);
            if (s.truth) {
                LatentPath p;
                p.z.assign(s.truth->z.begin() + start, s.truth->z.begin() + start + len);
                p.d.assign(s.truth->d.begin() + start, s.truth->d.begin() + start + len);
                chunk.truth = std::move(p);
            }
            out.sequences.push_back(std::move(chunk));
        }
    }
    return out;
}

std::vector<Split> leave_one_out_splits(const Dataset& dataset) {
    if (dataset.size() < 2) throw contract_error("leave_one_out_splits: need at least 2 sequences");
    std::vector<Split> splits;
    for (int i = 0; i < dataset.size(); ++i) {
        Split split;
        for (int j = 0; j < dataset.size(); ++j)
            if (j != i) split.train.sequences.push_back(dataset.sequences[static_cast<size_t>(j)]);
        split.test.sequences.push_back(dataset.sequences[static_cast<size_t>(i)]);
        split.train.stats = compute_norm_stats(split.train);
        split.test.stats = split.train.stats;
        splits.push_back(std::move(split));
    }
    return splits;
}

}  // namespace ssnn
