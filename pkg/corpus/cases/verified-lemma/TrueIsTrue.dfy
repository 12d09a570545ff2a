lemma TrueIsTrue()
  ensures true
{
}
