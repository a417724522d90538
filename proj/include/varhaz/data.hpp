#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace varhaz {

/**
 * One observed member of one cluster.
 *
 * Member indices are zero-based inside the library; the CSV layer converts
 * from the one-based labels used in files.
 */
struct SubjectRecord {
    std::int64_t cluster_id = 0;
    int member = 0;
    double time = 0.0;      // X = min(T, C)
    bool event = false;     // Delta
    double v = 0.0;         // exposure modifying the coefficients
    Eigen::VectorXd z;      // covariates, length p
    bool present = true;    // false for padded (absent) members
};

struct EventTime {
    double time;
    std::int64_t cluster_id;

    friend bool operator==(const EventTime&, const EventTime&) = default;
};

/**
 * Immutable clustered failure-time data laid out as an n x J grid.
 *
 * Records are stored in canonical (cluster_id, member) order so that every
 * downstream computation is independent of the input row order. Missing
 * members are materialized as absent slots with X = 0 and no event; they never
 * enter a risk set.
 */
class Dataset {
public:
    Dataset() = default;

    /**
     * Validate and assemble records.
     *
     * @param members  J; inferred as 1 + the largest member index when omitted.
     * @param tau      administrative horizon; defaults to the largest observed time.
     */
    static Dataset from_records(std::vector<SubjectRecord> records,
                                std::optional<int> members = std::nullopt,
                                std::optional<double> tau = std::nullopt) {
        if (records.empty()) throw DataError("no records");
        Dataset ds;
        ds.p_ = static_cast<int>(records.front().z.size());
        int max_member = 0;
        for (std::size_t r = 0; r < records.size(); ++r) {
            const auto& rec = records[r];
            if (rec.z.size() != ds.p_)
                throw DataError("record " + std::to_string(r + 1) + ": covariate length " +
                                std::to_string(rec.z.size()) + " differs from " + std::to_string(ds.p_));
            if (!(rec.time >= 0.0)) throw DataError("record " + std::to_string(r + 1) + ": negative time");
            if (rec.member < 0) throw DataError("record " + std::to_string(r + 1) + ": member index out of range");
            if (!std::isfinite(rec.v) || !rec.z.allFinite())
                throw DataError("record " + std::to_string(r + 1) + ": non-finite covariate");
            max_member = std::max(max_member, rec.member);
        }
        ds.J_ = members.value_or(max_member + 1);
        if (max_member >= ds.J_) throw DataError("member index exceeds J");

        std::vector<std::int64_t> ids;
        ids.reserve(records.size());
        for (const auto& rec : records) ids.push_back(rec.cluster_id);
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        ds.cluster_ids_ = ids;
        ds.n_ = static_cast<int>(ids.size());

        ds.slots_.assign(static_cast<std::size_t>(ds.n_) * ds.J_, SubjectRecord{});
        std::vector<char> seen(ds.slots_.size(), 0);
        for (std::size_t r = 0; r < records.size(); ++r) {
            auto& rec = records[r];
            const auto ci = static_cast<std::size_t>(
                std::lower_bound(ids.begin(), ids.end(), rec.cluster_id) - ids.begin());
            const auto slot = ci * ds.J_ + rec.member;
            if (seen[slot])
                throw DataError("record " + std::to_string(r + 1) + ": duplicate (cluster=" +
                                std::to_string(rec.cluster_id) + ", member=" + std::to_string(rec.member + 1) + ")");
            seen[slot] = 1;
            rec.present = true;
            ds.slots_[slot] = std::move(rec);
        }
        for (std::size_t s = 0; s < ds.slots_.size(); ++s) {
            if (seen[s]) continue;
            auto& pad = ds.slots_[s];
            pad.cluster_id = ids[s / ds.J_];
            pad.member = static_cast<int>(s % ds.J_);
            pad.z = Eigen::VectorXd::Zero(ds.p_);
            pad.present = false;
        }

        double max_time = 0.0;
        for (const auto& rec : ds.slots_)
            if (rec.present) max_time = std::max(max_time, rec.time);
        ds.tau_ = tau.value_or(max_time);
        if (!(ds.tau_ >= 0.0)) throw DataError("tau must be nonnegative");

        ds.build_orders();
        return ds;
    }

    int n() const noexcept { return n_; }
    int members() const noexcept { return J_; }
    int dim() const noexcept { return p_; }
    double tau() const noexcept { return tau_; }

    const std::vector<std::int64_t>& cluster_ids() const noexcept { return cluster_ids_; }

    /// Record for cluster position i (0-based, ascending cluster id) and member j.
    const SubjectRecord& at(int i, int j) const { return slots_[static_cast<std::size_t>(i) * J_ + j]; }

    const std::vector<SubjectRecord>& slots() const noexcept { return slots_; }

    /// Cluster positions of present members j sorted by time descending, ties by cluster id.
    const std::vector<int>& order_desc(int j) const {
        check_member(j);
        return order_desc_[j];
    }

    /// Clusters i with X_ij >= t, ascending.
    std::vector<int> risk_set(int j, double t) const {
        check_member(j);
        std::vector<int> out;
        for (int i = 0; i < n_; ++i) {
            const auto& rec = at(i, j);
            if (rec.present && rec.time >= t) out.push_back(i);
        }
        return out;
    }

    /// Observed failures of member j within [0, tau], ascending by time then cluster id.
    std::vector<EventTime> event_times(int j) const {
        check_member(j);
        std::vector<EventTime> out;
        for (int i = 0; i < n_; ++i) {
            const auto& rec = at(i, j);
            if (counts_event(rec)) out.push_back({rec.time, rec.cluster_id});
        }
        std::sort(out.begin(), out.end(), [](const EventTime& a, const EventTime& b) {
            return a.time != b.time ? a.time < b.time : a.cluster_id < b.cluster_id;
        });
        return out;
    }

    /// Whether the record contributes a jump dN within [0, tau].
    bool counts_event(const SubjectRecord& rec) const noexcept {
        return rec.present && rec.event && rec.time <= tau_;
    }

    std::pair<double, double> v_range() const {
        double lo = std::numeric_limits<double>::infinity();
        double hi = -lo;
        for (const auto& rec : slots_) {
            if (!rec.present) continue;
            lo = std::min(lo, rec.v);
            hi = std::max(hi, rec.v);
        }
        return {lo, hi};
    }

    /// Copy holding only member j (as the single member of each cluster).
    Dataset single_member(int j) const {
        check_member(j);
        std::vector<SubjectRecord> recs;
        for (int i = 0; i < n_; ++i) {
            auto rec = at(i, j);
            if (!rec.present) continue;
            rec.member = 0;
            recs.push_back(std::move(rec));
        }
        return from_records(std::move(recs), 1, tau_);
    }

    std::size_t event_count() const {
        std::size_t c = 0;
        for (const auto& rec : slots_) c += counts_event(rec) ? 1 : 0;
        return c;
    }

private:
    void check_member(int j) const {
        if (j < 0 || j >= J_) throw DataError("member index " + std::to_string(j) + " out of range");
    }

    void build_orders() {
        order_desc_.assign(J_, {});
        for (int j = 0; j < J_; ++j) {
            auto& ord = order_desc_[j];
            for (int i = 0; i < n_; ++i)
                if (at(i, j).present) ord.push_back(i);
            std::sort(ord.begin(), ord.end(), [&](int a, int b) {
                const double ta = at(a, j).time, tb = at(b, j).time;
                return ta != tb ? ta > tb : a < b;
            });
        }
    }

    int n_ = 0;
    int J_ = 0;
    int p_ = 0;
    double tau_ = 0.0;
    std::vector<std::int64_t> cluster_ids_;
    std::vector<SubjectRecord> slots_;
    std::vector<std::vector<int>> order_desc_;
};

// ---------------------------------------------------------------------------
// CSV ingestion

/// Logical column names. An empty `z` list selects every column named z1, z2, ... in numeric order.
struct CsvSchema {
    std::string cluster = "cluster";
    std::string member = "member";
    std::string time = "time";
    std::string status = "status";
    std::string v = "v";
    std::vector<std::string> z;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    std::string out(s.substr(b, e - b + 1));
    if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (char ch : line) {
        if (ch == '"') quoted = !quoted;
        if (ch == ',' && !quoted) {
            cells.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    cells.push_back(trim(cur));
    return cells;
}

inline double parse_number(const std::string& cell, std::size_t line, const std::string& column) {
    double value = 0.0;
    const char* first = cell.data();
    const char* last = first + cell.size();
    if (!cell.empty() && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (cell.empty() || ec != std::errc{} || ptr != last)
        throw DataError("row " + std::to_string(line) + ": non-numeric value '" + cell + "' in column '" + column + "'");
    return value;
}

} // namespace detail

/// Parse CSV text. Row numbers in errors are file line numbers (header is line 1).
inline Dataset parse_dataset(std::istream& in, const CsvSchema& schema = {},
                             std::optional<double> tau = std::nullopt) {
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!detail::trim(line).empty()) {
            header = detail::split_csv_line(line);
            break;
        }
    }
    if (header.empty()) throw DataError("no records");

    auto find_col = [&](const std::string& name) -> std::size_t {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw DataError("missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto c_cluster = find_col(schema.cluster);
    const auto c_member = find_col(schema.member);
    const auto c_time = find_col(schema.time);
    const auto c_status = find_col(schema.status);
    const auto c_v = find_col(schema.v);

    std::vector<std::string> z_names = schema.z;
    if (z_names.empty()) {
        static const std::regex z_re("^z([0-9]+)$");
        std::vector<std::pair<int, std::string>> found;
        for (const auto& h : header) {
            std::smatch m;
            if (std::regex_match(h, m, z_re)) found.emplace_back(std::stoi(m[1].str()), h);
        }
        std::sort(found.begin(), found.end());
        for (auto& [k, name] : found) z_names.push_back(name);
        if (z_names.empty()) throw DataError("missing covariate columns (expected z1..zp)");
    }
    std::vector<std::size_t> c_z;
    for (const auto& name : z_names) c_z.push_back(find_col(name));

    std::vector<SubjectRecord> records;
    std::map<std::pair<std::int64_t, int>, std::size_t> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw DataError("row " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                            " cells, found " + std::to_string(cells.size()));
        SubjectRecord rec;
        const double cid = detail::parse_number(cells[c_cluster], line_no, schema.cluster);
        const double mem = detail::parse_number(cells[c_member], line_no, schema.member);
        if (cid != std::floor(cid) || cid < 0)
            throw DataError("row " + std::to_string(line_no) + ": cluster must be a nonnegative integer");
        if (mem != std::floor(mem) || mem < 1)
            throw DataError("row " + std::to_string(line_no) + ": member must be an integer >= 1");
        rec.cluster_id = static_cast<std::int64_t>(cid);
        rec.member = static_cast<int>(mem) - 1;
        rec.time = detail::parse_number(cells[c_time], line_no, schema.time);
        if (rec.time < 0) throw DataError("row " + std::to_string(line_no) + ": negative time");
        const double status = detail::parse_number(cells[c_status], line_no, schema.status);
        if (status != 0.0 && status != 1.0)
            throw DataError("row " + std::to_string(line_no) + ": status must be 0 or 1");
        rec.event = status == 1.0;
        rec.v = detail::parse_number(cells[c_v], line_no, schema.v);
        rec.z.resize(static_cast<Eigen::Index>(c_z.size()));
        for (std::size_t k = 0; k < c_z.size(); ++k)
            rec.z(static_cast<Eigen::Index>(k)) = detail::parse_number(cells[c_z[k]], line_no, z_names[k]);

        const auto key = std::make_pair(rec.cluster_id, rec.member);
        if (auto it = seen.find(key); it != seen.end())
            throw DataError("row " + std::to_string(line_no) + ": duplicate (cluster=" + std::to_string(rec.cluster_id) +
                            ", member=" + std::to_string(rec.member + 1) + "), first seen at row " +
                            std::to_string(it->second));
        seen.emplace(key, line_no);
        records.push_back(std::move(rec));
    }
    if (records.empty()) throw DataError("no records");
    return Dataset::from_records(std::move(records), std::nullopt, tau);
}

inline Dataset load_dataset(const std::string& path, const CsvSchema& schema = {},
                            std::optional<double> tau = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    return parse_dataset(in, schema, tau);
}

/// Write in the layout read by parse_dataset (one-based members, z1..zp).
inline void write_dataset(std::ostream& out, const Dataset& ds) {
    out << "cluster,member,time,status,v";
    for (int k = 0; k < ds.dim(); ++k) out << ",z" << (k + 1);
    out << '\n';
    std::ostringstream row;
    row.precision(17);
    for (const auto& rec : ds.slots()) {
        if (!rec.present) continue;
        row.str({});
        row << rec.cluster_id << ',' << (rec.member + 1) << ',' << rec.time << ',' << (rec.event ? 1 : 0) << ','
            << rec.v;
        for (int k = 0; k < ds.dim(); ++k) row << ',' << rec.z(k);
        out << row.str() << '\n';
    }
}

} // namespace varhaz
