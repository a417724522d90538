#include <gtest/gtest.h>

#include <oracles.hpp>
#include <varhaz/data.hpp>

#include <algorithm>
#include <random>
#include <sstream>

using namespace varhaz;
using oracle::record;

namespace {

Dataset parse(const std::string& text, std::optional<double> tau = std::nullopt) {
    std::istringstream in(text);
    return parse_dataset(in, {}, tau);
}

Dataset one_member(const std::vector<double>& times, const std::vector<std::int64_t>& ids, bool event = true) {
    std::vector<SubjectRecord> recs;
    for (std::size_t k = 0; k < times.size(); ++k) recs.push_back(record(ids[k], 0, times[k], event, 0.0, {0.0}));
    return Dataset::from_records(recs);
}

} // namespace

TEST(Csv, SixRowsGiveTwoClustersOfThree) {
    const auto ds = parse("cluster,member,time,status,v,z1,z2\n"
                          "1,1,0.5,1,0.1,1,2\n1,2,0.7,0,0.2,1,2\n1,3,0.9,1,0.3,1,2\n"
                          "2,1,1.5,1,0.4,1,2\n2,2,1.7,1,0.5,1,2\n2,3,1.9,0,0.6,1,2\n");
    EXPECT_EQ(ds.n(), 2);
    EXPECT_EQ(ds.members(), 3);
    EXPECT_EQ(ds.dim(), 2);
    EXPECT_DOUBLE_EQ(ds.tau(), 1.9);
}

TEST(Csv, EmptyFileHasNoRecords) {
    try {
        parse("");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("no records"), std::string::npos);
    }
    EXPECT_THROW(parse("cluster,member,time,status,v,z1\n"), DataError);
}

TEST(Csv, DuplicateKeyNamesTheRow) {
    try {
        parse("cluster,member,time,status,v,z1\n1,1,1,1,0,0\n2,1,1,1,0,0\n1,1,2,0,0,0\n");
        FAIL();
    } catch (const DataError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("duplicate"), std::string::npos);
        EXPECT_NE(msg.find("row 4"), std::string::npos);
    }
}

TEST(Csv, RejectsMalformedCells) {
    EXPECT_THROW(parse("cluster,member,time,status,v,z1\n1,1,abc,1,0,0\n"), DataError);
    EXPECT_THROW(parse("cluster,member,time,status,v,z1\n1,1,1,2,0,0\n"), DataError);
    EXPECT_THROW(parse("cluster,member,time,status,v,z1\n1,0,1,1,0,0\n"), DataError);
    EXPECT_THROW(parse("cluster,member,time,status,v,z1\n1,1,-1,1,0,0\n"), DataError);
    EXPECT_THROW(parse("cluster,member,time,status,v,z1\n1,1,1,1,0\n"), DataError);
    EXPECT_THROW(parse("cluster,member,time,status,v\n1,1,1,1,0\n"), DataError);
}

TEST(Csv, SchemaMappingAndExplicitCovariates) {
    std::istringstream in("id,type,x,d,age,a,b\n7,1,1.0,1,30,0.5,9\n7,2,2.0,0,31,0.25,9\n");
    CsvSchema schema{"id", "type", "x", "d", "age", {"a"}};
    const auto ds = parse_dataset(in, schema);
    EXPECT_EQ(ds.dim(), 1);
    EXPECT_EQ(ds.members(), 2);
    EXPECT_DOUBLE_EQ(ds.at(0, 1).z(0), 0.25);
    EXPECT_EQ(ds.cluster_ids().front(), 7);
}

TEST(Csv, CovariateColumnsInNumericOrder) {
    const auto ds = parse("z10,cluster,member,time,status,v,z2\n5,1,1,1,1,0,3\n");
    ASSERT_EQ(ds.dim(), 2);
    EXPECT_DOUBLE_EQ(ds.at(0, 0).z(0), 3.0);
    EXPECT_DOUBLE_EQ(ds.at(0, 0).z(1), 5.0);
}

TEST(Csv, WriteThenParseRoundTrips) {
    const auto ds = oracle::random_dataset(7, 3, 2, 11, 0.2);
    std::stringstream buf;
    write_dataset(buf, ds);
    const auto back = parse_dataset(buf);
    ASSERT_EQ(back.n(), ds.n());
    ASSERT_EQ(back.members(), ds.members());
    for (std::size_t s = 0; s < ds.slots().size(); ++s) {
        const auto& a = ds.slots()[s];
        const auto& b = back.slots()[s];
        EXPECT_EQ(a.present, b.present);
        if (!a.present) continue;
        EXPECT_EQ(a.time, b.time);
        EXPECT_EQ(a.event, b.event);
        EXPECT_EQ(a.v, b.v);
        EXPECT_EQ(a.z, b.z);
    }
}

TEST(RiskSet, DefinitionExamples) {
    const auto ds = one_member({1, 2, 3}, {1, 2, 3});
    EXPECT_EQ(ds.risk_set(0, 2.0), (std::vector<int>{1, 2}));
    EXPECT_EQ(ds.risk_set(0, 0.0), (std::vector<int>{0, 1, 2}));
    EXPECT_TRUE(ds.risk_set(0, 3.5).empty());
}

TEST(RiskSet, MonotoneInTime) {
    const auto ds = oracle::random_dataset(30, 2, 1, 3);
    for (int j = 0; j < 2; ++j) {
        std::vector<int> prev = ds.risk_set(j, 0.0);
        for (double t = 0.05; t < 3.0; t += 0.05) {
            const auto cur = ds.risk_set(j, t);
            EXPECT_TRUE(std::includes(prev.begin(), prev.end(), cur.begin(), cur.end()));
            prev = cur;
        }
    }
}

TEST(EventTimes, SortedWithTieRule) {
    const auto ds = one_member({3, 1, 2}, {1, 2, 3});
    const std::vector<EventTime> expect{{1, 2}, {2, 3}, {3, 1}};
    EXPECT_EQ(ds.event_times(0), expect);
    EXPECT_TRUE(one_member({1, 2}, {1, 2}, false).event_times(0).empty());
    const auto tie = one_member({2, 2}, {5, 3});
    const std::vector<EventTime> tied{{2, 3}, {2, 5}};
    EXPECT_EQ(tie.event_times(0), tied);
}

TEST(EventTimes, CountMatchesEventsWithinTau) {
    const auto ds = oracle::random_dataset(40, 3, 1, 5, 0.1);
    std::size_t total = 0;
    for (int j = 0; j < 3; ++j) total += ds.event_times(j).size();
    std::size_t direct = 0;
    for (const auto& r : ds.slots()) direct += (r.present && r.event) ? 1 : 0;
    EXPECT_EQ(total, direct);

    std::vector<SubjectRecord> recs;
    for (const auto& r : ds.slots())
        if (r.present) recs.push_back(r);
    const auto cut = Dataset::from_records(recs, 3, 0.5);
    std::size_t early = 0;
    for (const auto& r : cut.slots()) early += (r.present && r.event && r.time <= 0.5) ? 1 : 0;
    std::size_t counted = 0;
    for (int j = 0; j < 3; ++j) counted += cut.event_times(j).size();
    EXPECT_EQ(counted, early);
}

TEST(Dataset, AbsentMembersArePadded) {
    std::vector<SubjectRecord> recs{record(1, 0, 1.0, true, 0.1, {1.0}), record(2, 1, 2.0, true, 0.2, {1.0})};
    const auto ds = Dataset::from_records(recs, 2);
    EXPECT_FALSE(ds.at(0, 1).present);
    EXPECT_EQ(ds.at(0, 1).time, 0.0);
    EXPECT_FALSE(ds.at(0, 1).event);
    EXPECT_TRUE(ds.risk_set(1, 0.0) == std::vector<int>{1});
}

TEST(Dataset, RowOrderIsIrrelevant) {
    const auto ds = oracle::random_dataset(12, 3, 2, 9);
    std::vector<SubjectRecord> recs(ds.slots().begin(), ds.slots().end()); // no absent members here
    std::mt19937 rng(4);
    std::shuffle(recs.begin(), recs.end(), rng);
    const auto back = Dataset::from_records(recs, 3);
    for (std::size_t s = 0; s < ds.slots().size(); ++s) {
        EXPECT_EQ(ds.slots()[s].cluster_id, back.slots()[s].cluster_id);
        EXPECT_EQ(ds.slots()[s].time, back.slots()[s].time);
        EXPECT_EQ(ds.slots()[s].z, back.slots()[s].z);
    }
    for (int j = 0; j < 3; ++j) EXPECT_EQ(ds.order_desc(j), back.order_desc(j));
}

TEST(Dataset, ValidationErrors) {
    EXPECT_THROW(Dataset::from_records({}), DataError);
    std::vector<SubjectRecord> bad{record(1, 0, 1.0, true, 0.1, {1.0}), record(2, 0, 1.0, true, 0.1, {1.0, 2.0})};
    EXPECT_THROW(Dataset::from_records(bad), DataError);
    std::vector<SubjectRecord> dup{record(1, 0, 1.0, true, 0.1, {1.0}), record(1, 0, 2.0, true, 0.1, {1.0})};
    EXPECT_THROW(Dataset::from_records(dup), DataError);
    std::vector<SubjectRecord> over{record(1, 2, 1.0, true, 0.1, {1.0})};
    EXPECT_THROW(Dataset::from_records(over, 2), DataError);
}

TEST(Dataset, SingleMemberCopy) {
    const auto ds = oracle::random_dataset(10, 3, 1, 21, 0.2);
    const auto one = ds.single_member(2);
    EXPECT_EQ(one.members(), 1);
    int present = 0;
    for (int i = 0; i < ds.n(); ++i) present += ds.at(i, 2).present ? 1 : 0;
    EXPECT_EQ(one.n(), present);
    EXPECT_EQ(one.tau(), ds.tau());
}
