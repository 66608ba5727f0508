use rusqlite::Connection;

use sqlcode_core::dataset::ColumnNote;
use sqlcode_core::schema::{introspect_schema, render_context, SchemaAnnotations, SchemaOptions};

/// Movie-catalogue layout: seven tables, `\N` for missing values.
fn movie_db() -> Connection {
    let c = Connection::open_in_memory().unwrap();
    c.execute_batch(
        r"CREATE TABLE title_basics (tconst TEXT PRIMARY KEY, titleType TEXT, primaryTitle TEXT, startYear TEXT, endYear TEXT, runtimeMinutes TEXT, genres TEXT);
          CREATE TABLE title_akas (titleId TEXT REFERENCES title_basics(tconst), ordering INTEGER, title TEXT, region TEXT);
          CREATE TABLE title_crew (tconst TEXT REFERENCES title_basics(tconst), directors TEXT, writers TEXT);
          CREATE TABLE title_episode (tconst TEXT, parentTconst TEXT REFERENCES title_basics(tconst), seasonNumber TEXT, episodeNumber TEXT);
          CREATE TABLE title_principals (tconst TEXT, ordering INTEGER, nconst TEXT, category TEXT);
          CREATE TABLE title_ratings (tconst TEXT PRIMARY KEY, averageRating REAL, numVotes INTEGER);
          CREATE TABLE name_basics (nconst TEXT PRIMARY KEY, primaryName TEXT, birthYear TEXT, deathYear TEXT);
          INSERT INTO title_basics VALUES
            ('tt1', 'movie', 'First', '1999', '\N', '120', 'Drama'),
            ('tt2', 'tvSeries', 'Second', '2005', '2009', '45', 'Comedy'),
            ('tt3', 'movie', 'Third', '2011', '\N', '\N', 'Drama,Crime'),
            ('tt4', 'short', 'Fourth', '2020', '\N', '9', 'Animation');
          INSERT INTO title_ratings VALUES ('tt1', 7.5, 1200), ('tt2', 8.1, 5400);",
    )
    .unwrap();
    c
}

/// Football-statistics layout: sixteen tables, the widest with 115 columns.
fn football_db() -> Connection {
    let c = Connection::open_in_memory().unwrap();
    let mut ddl = String::new();
    for i in 0..15 {
        ddl.push_str(&format!("CREATE TABLE side_{i:02} (id INTEGER PRIMARY KEY, league TEXT, value REAL);\n"));
    }
    let cols: Vec<String> = (0..114).map(|i| format!("stat_{i:03} REAL")).collect();
    ddl.push_str(&format!("CREATE TABLE player_match_stats (player_id INTEGER, {});\n", cols.join(", ")));
    ddl.push_str("INSERT INTO side_00 VALUES (1, 'Premier League', 1.0), (2, 'Serie A', 2.0), (3, 'La Liga', 3.0);");
    c.execute_batch(&ddl).unwrap();
    c
}

#[test]
fn movie_catalogue_has_seven_tables() {
    let c = movie_db();
    let notes = SchemaAnnotations { null_literal: Some(r"\N".into()), ..Default::default() };
    let ctx = introspect_schema(&c, &notes, &SchemaOptions::default()).unwrap();
    assert_eq!(ctx.tables.len(), 7);
    assert_eq!(ctx.tables[0].sample_rows.len(), 3);
    let text = render_context(&ctx);
    for t in &ctx.tables {
        assert_eq!(text.matches(&format!("CREATE TABLE {} ", t.name)).count(), 1, "{}", t.name);
    }
    assert!(text.contains(r"stored as the literal '\N'"));
    assert!(text.contains("parentTconst references title_basics(tconst)"));
}

#[test]
fn football_stats_has_sixteen_tables_and_a_wide_one() {
    let c = football_db();
    let notes = SchemaAnnotations {
        notes: Some("Leagues in this database: Premier League, Serie A, La Liga.".into()),
        categorical: vec![ColumnNote { table: "side_00".into(), column: "league".into(), description: String::new() }],
        ..Default::default()
    };
    let ctx = introspect_schema(&c, &notes, &SchemaOptions::default()).unwrap();
    assert_eq!(ctx.tables.len(), 16);
    assert_eq!(ctx.tables.iter().map(|t| t.columns.len()).max(), Some(115));
    let text = render_context(&ctx);
    assert!(text.trim_end().ends_with("Leagues in this database: Premier League, Serie A, La Liga."));
    assert!(text.contains("- side_00.league: La Liga, Premier League, Serie A"));
    assert_eq!(text, render_context(&introspect_schema(&c, &notes, &SchemaOptions::default()).unwrap()));
}

#[test]
fn empty_database_renders_nothing() {
    let c = Connection::open_in_memory().unwrap();
    let ctx = introspect_schema(&c, &SchemaAnnotations::default(), &SchemaOptions::default()).unwrap();
    assert!(ctx.tables.is_empty());
    assert_eq!(render_context(&ctx), "");
}
